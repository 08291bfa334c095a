//! Sum-rate objective, its analytic gradient and the per-run complexity estimate.
//!
//! Rates are in bits (base-2 logarithm). The gradient is the expression
//!
//! ```text
//! ∇_W R = (1/B) Σ_b ( c · A G† H H^H Q^{-1} (I − P) )^H,   c = ρ_s/σ_w²
//! ```
//!
//! with `G = W A`, `G† = (G^H G)^{-1} G^H`, `P = G G†` and `Q = I + c P H H^H`,
//! which is the derivative of the natural-log rate in the `Re tr(X^H dW)`
//! convention up to a factor of two. It is evaluated without ever forming an
//! `M x M` matrix: since `H^H Q^{-1} = K^{-1} H^H` with the `K x K` Hermitian
//! positive-definite `K = I + c H^H P H`, the gradient becomes
//! `c (I − P) H K^{-1} (G^H H)^H (G^H G)^{-1} A^H`, and the rate is
//! `log |K|` by the determinant identity `|I_M + c P H H^H| = |I_K + c H^H P H|`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, SystemParams};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigenvalues, BlockStructure, Cholesky, ComplexMatrix, C64};
use crate::optimizer::AnalogBeamformer;

/// Eigenvalue ratio of `G^H G` below which the rank guard fires.
pub const RANK_GUARD_RATIO: f64 = 1e-10;

/// Diagonal loading applied to `G^H G` when the rank guard fires.
pub const RANK_GUARD_LOADING: f64 = 1e-9;

/// Ratio between the central finite difference of the base-2 rate along a
/// direction `Δ` and `Re tr(∇^H Δ)` for the gradient returned here.
pub const GRADIENT_FD_SCALE: f64 = 2.0 / LN_2;

/// Binary panel-to-CPU wiring matrix `A` of shape `(L*P) x T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityMatrix {
    matrix: ComplexMatrix,
}

impl ConnectivityMatrix {
    /// Builds `A` from 0/1 rows; any other entry is rejected.
    pub fn from_binary(rows: &[Vec<u8>]) -> Result<Self> {
        let lp = rows.len();
        let t = rows.first().map_or(0, |r| r.len());
        if lp == 0 || t == 0 {
            return Err(Error::InvalidArgument("connectivity matrix must be non-empty".into()));
        }
        let mut matrix = ComplexMatrix::zeros(lp, t);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != t {
                return Err(Error::Schema(format!("connectivity row {i} has {} entries, expected {t}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => matrix[(i, j)] = C64::new(1.0, 0.0),
                    other => {
                        return Err(Error::Schema(format!(
                            "connectivity entry ({i},{j}) = {other} is not binary"
                        )))
                    }
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: ComplexMatrix::identity(n),
        }
    }

    /// Panel output `q` wired to CPU input `q mod T`.
    pub fn round_robin(outputs: usize, inputs: usize) -> Result<Self> {
        if outputs == 0 || inputs == 0 {
            return Err(Error::InvalidArgument("round-robin wiring needs positive sizes".into()));
        }
        let rows: Vec<Vec<u8>> = (0..outputs)
            .map(|q| (0..inputs).map(|t| u8::from(q % inputs == t)).collect())
            .collect();
        Self::from_binary(&rows)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    /// Number of panel outputs `L*P`.
    pub fn outputs(&self) -> usize {
        self.matrix.rows()
    }

    /// Number of CPU inputs `T`.
    pub fn inputs(&self) -> usize {
        self.matrix.cols()
    }

    pub fn to_binary(&self) -> Vec<Vec<u8>> {
        (0..self.outputs())
            .map(|i| (0..self.inputs()).map(|j| u8::from(self.matrix[(i, j)].re != 0.0)).collect())
            .collect()
    }
}

/// `G = W A`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannel(pub ComplexMatrix);

pub fn equivalent_channel(w: &AnalogBeamformer, a: &ConnectivityMatrix) -> Result<EquivalentChannel> {
    Ok(EquivalentChannel(w.matrix().matmul(a.matrix())?))
}

/// Inverse of `G^H G`, with the rank guard applied.
#[derive(Debug, Clone)]
pub(crate) struct GramInverse {
    pub inverse: ComplexMatrix,
    pub regularized: bool,
}

/// Decides whether `G^H G` needs diagonal loading.
///
/// The bound `λ_max/λ_min ≤ tr(X) tr(X^{-1})` lets the common case skip the
/// eigenvalue computation.
pub(crate) fn rank_guard_fires(gram: &ComplexMatrix) -> Result<Option<Cholesky>> {
    let chol = match Cholesky::new(gram) {
        Ok(c) => c,
        Err(Error::IllConditioned { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let inv = chol.inverse();
    let bound = gram.trace().re * inv.trace().re;
    if bound.is_finite() && bound * RANK_GUARD_RATIO <= 1.0 {
        return Ok(Some(chol));
    }
    let eig = hermitian_eigenvalues(gram)?;
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    if lo < RANK_GUARD_RATIO * hi {
        Ok(None)
    } else {
        Ok(Some(chol))
    }
}

pub(crate) fn gram_inverse(g: &ComplexMatrix) -> Result<GramInverse> {
    let gram = g.adjoint_matmul(g)?;
    if !gram.is_finite() {
        return Err(Error::NonFinite("equivalent channel"));
    }
    match rank_guard_fires(&gram)? {
        Some(chol) => Ok(GramInverse {
            inverse: chol.inverse(),
            regularized: false,
        }),
        None => {
            let mut loaded = gram;
            for i in 0..loaded.rows() {
                loaded[(i, i)] += RANK_GUARD_LOADING;
            }
            Ok(GramInverse {
                inverse: Cholesky::new(&loaded)?.inverse(),
                regularized: true,
            })
        }
    }
}

/// Rate, optional gradient, and whether the rank guard altered the evaluation.
#[derive(Debug, Clone)]
pub struct RateEvaluation {
    pub rate: f64,
    pub gradient: Option<ComplexMatrix>,
    pub regularized: bool,
}

fn check_channel(g: &ComplexMatrix, h: &ChannelRealization) -> Result<()> {
    if h.antennas() != g.rows() {
        return Err(Error::DimensionMismatch {
            op: "channel vs equivalent channel",
            left: (h.antennas(), h.users()),
            right: g.shape(),
        });
    }
    Ok(())
}

/// Rate of an equivalent channel `G` directly, bypassing the `W A` factorization.
pub fn sum_rate_of_equivalent(g: &ComplexMatrix, h: &ChannelRealization, p: &SystemParams) -> Result<RateEvaluation> {
    check_channel(g, h)?;
    let gi = gram_inverse(g)?;
    let c = p.snr();
    let mut total = 0.0;
    for hb in h.matrices() {
        let f = g.adjoint_matmul(hb)?;
        let kmat = k_matrix(&f, &gi.inverse, c)?;
        total += Cholesky::new(&kmat)?.ln_det();
    }
    Ok(RateEvaluation {
        rate: total / (h.bins() as f64 * LN_2),
        gradient: None,
        regularized: gi.regularized,
    })
}

/// `I_K + c F^H (G^H G)^{-1} F`, symmetrised.
fn k_matrix(f: &ComplexMatrix, ginv: &ComplexMatrix, c: f64) -> Result<ComplexMatrix> {
    let gf = ginv.matmul(f)?;
    let mut k = f.adjoint_matmul(&gf)?.scale(c);
    let n = k.rows();
    for i in 0..n {
        k[(i, i)].re += 1.0;
        k[(i, i)].im = 0.0;
        for j in 0..i {
            let avg = (k[(i, j)] + k[(j, i)].conj()) * 0.5;
            k[(i, j)] = avg;
            k[(j, i)] = avg.conj();
        }
    }
    Ok(k)
}

/// Evaluates the rate and, if requested, its gradient with respect to `W`.
pub fn evaluate(
    w: &AnalogBeamformer,
    a: &ConnectivityMatrix,
    h: &ChannelRealization,
    p: &SystemParams,
    with_gradient: bool,
) -> Result<RateEvaluation> {
    if !w.matrix().is_finite() {
        return Err(Error::NonFinite("beamformer"));
    }
    let g = equivalent_channel(w, a)?.0;
    check_channel(&g, h)?;
    let gi = gram_inverse(&g)?;
    let c = p.snr();
    let mut total = 0.0;
    let mut acc = with_gradient.then(|| ComplexMatrix::zeros(g.rows(), g.cols()));
    for hb in h.matrices() {
        let f = g.adjoint_matmul(hb)?;
        let kmat = k_matrix(&f, &gi.inverse, c)?;
        let kch = Cholesky::new(&kmat)?;
        total += kch.ln_det();
        if let Some(acc) = acc.as_mut() {
            // (I − P) H K^{-1} F^H (G^H G)^{-1}
            let r = kch.solve(&f.adjoint())?.matmul(&gi.inverse)?;
            acc.axpy(C64::new(1.0, 0.0), &hb.matmul(&r)?)?;
        }
    }
    let bins = h.bins() as f64;
    // the projection is linear, so it is applied once to the bin sum
    let acc = match acc {
        Some(u) => {
            let proj = g.matmul(&gi.inverse.matmul(&g.adjoint_matmul(&u)?)?)?;
            Some(u.sub(&proj)?)
        }
        None => None,
    };
    let gradient = acc.map(|acc| masked_matmul_adjoint(&acc, a.matrix(), w.structure()).scale(c / bins));
    Ok(RateEvaluation {
        rate: total / (bins * LN_2),
        gradient,
        regularized: gi.regularized,
    })
}

/// On-block entries of `v a^H`; off-block entries are zero.
pub(crate) fn masked_matmul_adjoint(v: &ComplexMatrix, a: &ComplexMatrix, s: &BlockStructure) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(s.total_rows(), s.total_cols());
    let t = v.cols();
    for (i, j) in s.support() {
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..t {
            acc += v[(i, k)] * a[(j, k)].conj();
        }
        out[(i, j)] = acc;
    }
    out
}

/// Average achievable sum-rate in bits per channel use.
pub fn sum_rate(w: &AnalogBeamformer, a: &ConnectivityMatrix, h: &ChannelRealization, p: &SystemParams) -> Result<f64> {
    Ok(evaluate(w, a, h, p, false)?.rate)
}

/// Analytic rate gradient, restricted to the block-diagonal support.
pub fn rate_gradient(w: &AnalogBeamformer, a: &ConnectivityMatrix, h: &ChannelRealization, p: &SystemParams) -> Result<ComplexMatrix> {
    Ok(evaluate(w, a, h, p, true)?.gradient.expect("gradient requested"))
}

/// `e^{j∠w}` on the support, with 0 where `w = 0` (a valid subgradient of `|w|`).
pub fn phase_direction(w: &ComplexMatrix, s: &BlockStructure) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(w.rows(), w.cols());
    for (i, j) in s.support() {
        let z = w[(i, j)];
        let r = z.norm();
        if r > 0.0 {
            out[(i, j)] = z / r;
        }
    }
    out
}

/// Subtracts `λ ⊙ e^{j∠W}` from a rate gradient in place.
pub(crate) fn apply_l1_penalty(grad: &mut ComplexMatrix, w: &ComplexMatrix, lambda: &[f64], s: &BlockStructure) {
    let cols = w.cols();
    for (i, j) in s.support() {
        let l = lambda[i * cols + j];
        if l == 0.0 {
            continue;
        }
        let z = w[(i, j)];
        let r = z.norm();
        if r > 0.0 {
            grad[(i, j)] -= z / r * l;
        }
    }
}

/// Gradient of `R − Σ λ_ij |W_ij|`.
///
/// `lambda` holds one non-negative weight per entry of `W`, row-major.
pub fn regularized_gradient(
    w: &AnalogBeamformer,
    a: &ConnectivityMatrix,
    h: &ChannelRealization,
    p: &SystemParams,
    lambda: &[f64],
) -> Result<ComplexMatrix> {
    let (rows, cols) = w.matrix().shape();
    if lambda.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            op: "regularized_gradient",
            left: (rows, cols),
            right: (lambda.len(), 1),
        });
    }
    if lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidArgument("regularization weights must be non-negative".into()));
    }
    let mut grad = rate_gradient(w, a, h, p)?;
    apply_l1_penalty(&mut grad, w.matrix(), lambda, w.structure());
    Ok(grad)
}

/// Dimensions entering the complexity estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityDims {
    pub iterations: u64,
    pub bins: u64,
    pub cpu_inputs: u64,
    pub antennas: u64,
    pub users: u64,
    pub outputs_per_panel: u64,
    pub panels: u64,
}

/// Order-of count of complex multiplications for `J` iterations:
/// `J B (T³ + M²(T+K) + M(T² + LPT + TK))`.
pub fn complexity_estimate(d: ComplexityDims) -> Result<u128> {
    let ComplexityDims {
        iterations: j,
        bins: b,
        cpu_inputs: t,
        antennas: m,
        users: k,
        outputs_per_panel: l,
        panels: p,
    } = d;
    if [j, b, t, m, k, l, p].contains(&0) {
        return Err(Error::InvalidArgument("complexity dimensions must be >= 1".into()));
    }
    let (j, b, t, m, k, l, p) = (j as u128, b as u128, t as u128, m as u128, k as u128, l as u128, p as u128);
    Ok(j * b * (t.pow(3) + m * m * (t + k) + m * (t * t + l * p * t + t * k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_rayleigh, ChannelDims};
    use crate::constraints::project_unit_modulus;
    use crate::seeding::rng_from;
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_feasible(s: BlockStructure, seed: u64) -> AnalogBeamformer {
        let mut rng = rng_from(seed);
        let m = ComplexMatrix::from_fn(s.total_rows(), s.total_cols(), |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        AnalogBeamformer::from_unmasked(project_unit_modulus(&m, &s), s).unwrap()
    }

    #[test]
    fn scalar_rate_is_one_bit() {
        let s = BlockStructure::new(1, 1, 1).unwrap();
        let w = AnalogBeamformer::new(ComplexMatrix::identity(1), s).unwrap();
        let a = ConnectivityMatrix::identity(1);
        let h = ChannelRealization::new(vec![ComplexMatrix::identity(1)]).unwrap();
        let p = SystemParams::new(1.0, 1.0).unwrap();
        assert!((sum_rate(&w, &a, &h, &p).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_channel_has_zero_rate_and_gradient() {
        let s = BlockStructure::new(2, 3, 2).unwrap();
        let w = random_feasible(s, 1);
        let a = ConnectivityMatrix::round_robin(4, 3).unwrap();
        let h = ChannelRealization::zeros(ChannelDims { antennas: 6, users: 2, bins: 2 });
        let p = SystemParams::new(1.0, 1.0).unwrap();
        let ev = evaluate(&w, &a, &h, &p, true).unwrap();
        assert_eq!(ev.rate, 0.0);
        assert_eq!(ev.gradient.unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn equivalent_channel_cases() {
        let s = BlockStructure::new(2, 2, 2).unwrap();
        let w = random_feasible(s, 2);
        let g = equivalent_channel(&w, &ConnectivityMatrix::identity(4)).unwrap();
        assert_eq!(g.0, *w.matrix());
        let zero = AnalogBeamformer::new(ComplexMatrix::zeros(4, 4), s).unwrap();
        let a = ConnectivityMatrix::round_robin(4, 3).unwrap();
        assert_eq!(equivalent_channel(&zero, &a).unwrap().0, ComplexMatrix::zeros(4, 3));
        let bad = ConnectivityMatrix::round_robin(5, 3).unwrap();
        assert!(equivalent_channel(&w, &bad).is_err());
    }

    #[test]
    fn round_robin_pattern() {
        let a = ConnectivityMatrix::round_robin(5, 3).unwrap();
        assert_eq!(
            a.to_binary(),
            vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0], vec![0, 1, 0]]
        );
        assert!(ConnectivityMatrix::from_binary(&[vec![0, 2]]).is_err());
    }

    #[test]
    fn square_equivalent_channel_has_zero_gradient() {
        // M = T = 4 with identity wiring: I − P vanishes
        let s = BlockStructure::new(2, 2, 2).unwrap();
        let w = random_feasible(s, 3);
        let a = ConnectivityMatrix::identity(4);
        let h = generate_rayleigh(4, 3, 2, 1, 5).unwrap();
        let p = SystemParams::new(1.0, 0.5).unwrap();
        let g = rate_gradient(&w, &a, &h.samples[0], &p).unwrap();
        assert!(g.frobenius_norm() < 1e-10, "{}", g.frobenius_norm());
    }

    #[test]
    fn gradient_is_block_supported() {
        let s = BlockStructure::new(3, 3, 2).unwrap();
        let w = random_feasible(s, 4);
        let a = ConnectivityMatrix::round_robin(6, 4).unwrap();
        let h = generate_rayleigh(9, 3, 2, 1, 6).unwrap();
        let p = SystemParams::new(1.0, 1.0).unwrap();
        let g = rate_gradient(&w, &a, &h.samples[0], &p).unwrap();
        for i in 0..9 {
            for j in 0..6 {
                if !s.on_block(i, j) {
                    assert_eq!(g[(i, j)], c(0.0, 0.0));
                }
            }
        }
        assert!(g.frobenius_norm() > 0.0);
    }

    #[test]
    fn penalty_only_gradient() {
        let s = BlockStructure::new(1, 1, 1).unwrap();
        let phi = 0.7;
        let w = AnalogBeamformer::new(ComplexMatrix::new(1, 1, vec![C64::from_polar(1.0, phi)]).unwrap(), s).unwrap();
        let a = ConnectivityMatrix::identity(1);
        let h = ChannelRealization::zeros(ChannelDims { antennas: 1, users: 1, bins: 1 });
        let p = SystemParams::new(1.0, 1.0).unwrap();
        let g = regularized_gradient(&w, &a, &h, &p, &[1.0]).unwrap();
        assert!((g[(0, 0)] + C64::from_polar(1.0, phi)).norm() < 1e-15);
        assert!(regularized_gradient(&w, &a, &h, &p, &[-1.0]).is_err());
        assert!(regularized_gradient(&w, &a, &h, &p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_lambda_matches_rate_gradient() {
        let s = BlockStructure::new(2, 3, 2).unwrap();
        let w = random_feasible(s, 7);
        let a = ConnectivityMatrix::round_robin(4, 3).unwrap();
        let h = generate_rayleigh(6, 2, 1, 1, 8).unwrap();
        let p = SystemParams::new(1.0, 1.0).unwrap();
        let g0 = rate_gradient(&w, &a, &h.samples[0], &p).unwrap();
        let g1 = regularized_gradient(&w, &a, &h.samples[0], &p, &[0.0; 24]).unwrap();
        assert_eq!(g0, g1);
    }

    #[test]
    fn rank_guard_on_zero_beamformer() {
        let s = BlockStructure::new(2, 2, 2).unwrap();
        let w = AnalogBeamformer::new(ComplexMatrix::zeros(4, 4), s).unwrap();
        let a = ConnectivityMatrix::round_robin(4, 2).unwrap();
        let h = generate_rayleigh(4, 2, 1, 1, 9).unwrap();
        let p = SystemParams::new(1.0, 1.0).unwrap();
        let ev = evaluate(&w, &a, &h.samples[0], &p, true).unwrap();
        assert!(ev.regularized);
        assert_eq!(ev.rate, 0.0);
    }

    #[test]
    fn complexity_formula() {
        let d = ComplexityDims {
            iterations: 10,
            bins: 2,
            cpu_inputs: 5,
            antennas: 40,
            users: 20,
            outputs_per_panel: 4,
            panels: 2,
        };
        // 10*2*(125 + 1600*25 + 40*(25 + 40 + 100)) = 20 * 46725
        assert_eq!(complexity_estimate(d).unwrap(), 934_500);
        let doubled_j = complexity_estimate(ComplexityDims { iterations: 20, ..d }).unwrap();
        let doubled_b = complexity_estimate(ComplexityDims { bins: 4, ..d }).unwrap();
        assert_eq!(doubled_j, 2 * 934_500);
        assert_eq!(doubled_b, 2 * 934_500);
        assert!(complexity_estimate(ComplexityDims { users: 0, ..d }).is_err());
    }
}
