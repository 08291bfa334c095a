//! Projected gradient ascent with momentum, unrolled for a fixed number of
//! iterations with per-iteration, per-entry step, momentum and ℓ1 weights.

use serde::{Deserialize, Serialize};

use crate::channel::{complex_gaussian, ChannelRealization, SystemParams};
use crate::constraints::{project_unit_modulus, ProjectionSpec, SurrogateSpec};
use crate::error::{Error, Result};
use crate::linalg::{BlockStructure, ComplexMatrix, C64};
use crate::objective::{apply_l1_penalty, evaluate, ConnectivityMatrix, RateEvaluation};
use crate::seeding::rng_from;

/// Block-diagonal analog receive beamformer `W = blkdiag{W_1, ..., W_P}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogBeamformer {
    matrix: ComplexMatrix,
    structure: BlockStructure,
}

impl AnalogBeamformer {
    /// Wraps `matrix`, rejecting non-zero off-block entries.
    pub fn new(matrix: ComplexMatrix, structure: BlockStructure) -> Result<Self> {
        check_shape(&matrix, &structure)?;
        for i in 0..matrix.rows() {
            for j in 0..matrix.cols() {
                if !structure.on_block(i, j) && matrix[(i, j)] != C64::new(0.0, 0.0) {
                    return Err(Error::InvalidArgument(format!("off-block entry ({i},{j}) is non-zero")));
                }
            }
        }
        Ok(Self { matrix, structure })
    }

    /// Wraps `matrix` after zeroing its off-block entries.
    pub fn from_unmasked(mut matrix: ComplexMatrix, structure: BlockStructure) -> Result<Self> {
        check_shape(&matrix, &structure)?;
        matrix.apply_mask(&structure);
        Ok(Self { matrix, structure })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    /// Number of non-zero on-block entries (`‖W‖₀`).
    pub fn active_count(&self) -> usize {
        self.structure
            .support()
            .filter(|&(i, j)| self.matrix[(i, j)] != C64::new(0.0, 0.0))
            .count()
    }

    /// `‖W‖₀ / (N L P)`.
    pub fn activity_ratio(&self) -> f64 {
        self.active_count() as f64 / self.structure.support_len() as f64
    }
}

fn check_shape(m: &ComplexMatrix, s: &BlockStructure) -> Result<()> {
    if m.shape() != s.shape() {
        return Err(Error::DimensionMismatch {
            op: "beamformer vs block structure",
            left: m.shape(),
            right: s.shape(),
        });
    }
    Ok(())
}

/// Draws `W_0`: i.i.d. `CN(0,1)` on the support, then projected to unit modulus.
pub fn init_beamformer(structure: BlockStructure, seed: u64) -> AnalogBeamformer {
    let mut rng = rng_from(seed);
    let mut m = ComplexMatrix::zeros(structure.total_rows(), structure.total_cols());
    for (i, j) in structure.support() {
        m[(i, j)] = complex_gaussian(&mut rng);
    }
    AnalogBeamformer {
        matrix: project_unit_modulus(&m, &structure),
        structure,
    }
}

/// Per-iteration, per-entry hyperparameters `θ = {α_j, β_j, λ_j}`.
///
/// Each entry is stored as a vector over the block support in row-major order,
/// which for a block-diagonal layout is panel, then row, then column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterSet {
    pub structure: BlockStructure,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
}

/// Which parameter family an index into a flattened `θ` refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamFamily {
    Alpha,
    Beta,
    Lambda,
}

impl HyperparameterSet {
    pub fn new(structure: BlockStructure, alpha: Vec<Vec<f64>>, beta: Vec<Vec<f64>>, lambda: Vec<Vec<f64>>) -> Result<Self> {
        let j = alpha.len();
        if beta.len() != j || lambda.len() != j {
            return Err(Error::InvalidArgument(format!(
                "iteration counts differ: alpha {j}, beta {}, lambda {}",
                beta.len(),
                lambda.len()
            )));
        }
        let n = structure.support_len();
        for (name, fam) in [("alpha", &alpha), ("beta", &beta), ("lambda", &lambda)] {
            if let Some((it, v)) = fam.iter().enumerate().find(|(_, v)| v.len() != n) {
                return Err(Error::InvalidArgument(format!(
                    "{name}[{it}] has {} entries, expected {n}",
                    v.len()
                )));
            }
        }
        if lambda.iter().flatten().any(|&l| !(l >= 0.0)) {
            return Err(Error::InvalidArgument("lambda entries must be non-negative".into()));
        }
        Ok(Self {
            structure,
            alpha,
            beta,
            lambda,
        })
    }

    /// Constant `(α, β, λ)` on every on-block entry of every iteration.
    pub fn constant(structure: BlockStructure, iterations: usize, alpha: f64, beta: f64, lambda: f64) -> Result<Self> {
        let n = structure.support_len();
        Self::new(
            structure,
            vec![vec![alpha; n]; iterations],
            vec![vec![beta; n]; iterations],
            vec![vec![lambda; n]; iterations],
        )
    }

    pub fn iterations(&self) -> usize {
        self.alpha.len()
    }

    pub fn uses_lambda(&self) -> bool {
        self.lambda.iter().flatten().any(|&l| l != 0.0)
    }

    /// `2 J P N L`, or `3 J P N L` when `λ` is trainable.
    pub fn parameter_count(&self, with_lambda: bool) -> usize {
        let per = self.structure.support_len() * self.iterations();
        if with_lambda {
            3 * per
        } else {
            2 * per
        }
    }

    /// Dense row-major `M x (L P)` real matrix with `values` on the support.
    pub fn dense(&self, values: &[f64]) -> Vec<f64> {
        let (rows, cols) = self.structure.shape();
        let mut out = vec![0.0; rows * cols];
        for ((i, j), &v) in self.structure.support().zip(values) {
            out[i * cols + j] = v;
        }
        out
    }

    /// Flattens `α` then `β` (then `λ`), iteration-major.
    pub fn to_flat(&self, with_lambda: bool) -> Vec<f64> {
        let mut out: Vec<f64> = self.alpha.iter().chain(&self.beta).flatten().copied().collect();
        if with_lambda {
            out.extend(self.lambda.iter().flatten());
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat); `λ` is left untouched when `with_lambda` is false.
    pub fn set_flat(&mut self, flat: &[f64], with_lambda: bool) -> Result<()> {
        let expected = self.parameter_count(with_lambda);
        if flat.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        let fams: Vec<&mut Vec<Vec<f64>>> = if with_lambda {
            vec![&mut self.alpha, &mut self.beta, &mut self.lambda]
        } else {
            vec![&mut self.alpha, &mut self.beta]
        };
        for fam in fams {
            for v in fam.iter_mut().flat_map(|v| v.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Family, iteration and support index of a flat parameter position.
    pub fn locate(&self, flat_index: usize) -> (ParamFamily, usize, usize) {
        let n = self.structure.support_len();
        let per = n * self.iterations();
        let fam = match flat_index / per {
            0 => ParamFamily::Alpha,
            1 => ParamFamily::Beta,
            _ => ParamFamily::Lambda,
        };
        let rem = flat_index % per;
        (fam, rem / n, rem % n)
    }
}

/// Classical PGA+M as a special case: scalar `μ`, `β` broadcast over all entries and iterations.
pub fn scalar_hyperparameters(structure: BlockStructure, iterations: usize, mu: f64, beta: f64) -> HyperparameterSet {
    HyperparameterSet::constant(structure, iterations, mu, beta, 0.0).expect("zero lambda is valid")
}

/// Projection used inside the loop: hard (inference) or smooth (training).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode {
    Hard,
    Surrogate(SurrogateSpec),
}

impl StepMode {
    pub fn apply(&self, projection: &ProjectionSpec, w: &ComplexMatrix) -> ComplexMatrix {
        match self {
            StepMode::Hard => projection.project(w),
            StepMode::Surrogate(spec) => projection.surrogate(w, spec),
        }
    }
}

/// One iteration: gradient step, momentum, projection, in that order.
pub fn pga_step(
    current: &ComplexMatrix,
    previous: &ComplexMatrix,
    gradient: &ComplexMatrix,
    alpha: &[f64],
    beta: &[f64],
    projection: &ProjectionSpec,
    mode: StepMode,
) -> Result<ComplexMatrix> {
    let s = &projection.structure;
    for (name, m) in [("current", current), ("previous", previous), ("gradient", gradient)] {
        if m.shape() != s.shape() {
            return Err(Error::DimensionMismatch {
                op: name,
                left: m.shape(),
                right: s.shape(),
            });
        }
    }
    if alpha.len() != s.support_len() || beta.len() != s.support_len() {
        return Err(Error::InvalidArgument(format!(
            "step/momentum weights need {} entries, got {} and {}",
            s.support_len(),
            alpha.len(),
            beta.len()
        )));
    }
    let mut next = ComplexMatrix::zeros(s.total_rows(), s.total_cols());
    for (k, (i, j)) in s.support().enumerate() {
        let stepped = current[(i, j)] + gradient[(i, j)] * alpha[k];
        next[(i, j)] = stepped + (current[(i, j)] - previous[(i, j)]) * beta[k];
    }
    Ok(mode.apply(projection, &next))
}

/// Iterates `W_0..W_J` with their rates, activity counts and guard flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub iterates: Vec<AnalogBeamformer>,
    pub rates: Vec<f64>,
    pub sparsity: Vec<usize>,
    /// `true` where the rank guard fired; from the second iterate on, a flagged
    /// iterate is a copy of its predecessor.
    pub flags: Vec<bool>,
}

impl Trajectory {
    pub fn final_iterate(&self) -> &AnalogBeamformer {
        self.iterates.last().expect("trajectory holds at least W_0")
    }

    pub fn final_rate(&self) -> f64 {
        *self.rates.last().expect("trajectory holds at least W_0")
    }

    pub fn any_flagged(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }
}

/// Runs the unrolled optimizer from `init` for `theta.iterations()` steps.
///
/// The ascent direction is the rate gradient, minus `λ_j ⊙ e^{j∠W}` wherever
/// `λ_j` is non-zero. When the rank guard fires on a new iterate, the iterate is
/// replaced by its predecessor and flagged.
pub fn run_unfolded(
    theta: &HyperparameterSet,
    a: &ConnectivityMatrix,
    h: &ChannelRealization,
    p: &SystemParams,
    projection: &ProjectionSpec,
    mode: StepMode,
    init: &AnalogBeamformer,
) -> Result<Trajectory> {
    if theta.structure != projection.structure || init.structure != projection.structure {
        return Err(Error::InvalidArgument(
            "hyperparameters, projection and initial beamformer disagree on the block structure".into(),
        ));
    }
    let iterations = theta.iterations();
    let s = projection.structure;
    let mut ev = evaluate(init, a, h, p, iterations > 0)?;
    let mut traj = Trajectory {
        iterates: vec![init.clone()],
        rates: vec![ev.rate],
        sparsity: vec![init.active_count()],
        flags: vec![ev.regularized],
    };
    let mut previous = ComplexMatrix::zeros(s.total_rows(), s.total_cols());
    for j in 0..iterations {
        let current = traj.iterates[j].matrix.clone();
        let mut grad = ev.gradient.take().expect("gradient requested for every non-final iterate");
        if theta.lambda[j].iter().any(|&l| l != 0.0) {
            apply_l1_penalty(&mut grad, &current, &theta.dense(&theta.lambda[j]), &s);
        }
        let next = pga_step(&current, &previous, &grad, &theta.alpha[j], &theta.beta[j], projection, mode)?;
        let candidate = AnalogBeamformer { matrix: next, structure: s };
        let need_grad = j + 1 < iterations;
        match evaluate(&candidate, a, h, p, need_grad) {
            Ok(next_ev) if !next_ev.regularized => {
                traj.push(candidate, next_ev.rate, false);
                ev = next_ev;
            }
            Ok(_) | Err(Error::IllConditioned { .. }) | Err(Error::NonFinite(_)) => {
                let kept = traj.iterates[j].clone();
                let rate = traj.rates[j];
                ev = if need_grad {
                    evaluate(&kept, a, h, p, true)?
                } else {
                    RateEvaluation {
                        rate,
                        gradient: None,
                        regularized: true,
                    }
                };
                traj.push(kept, rate, true);
            }
            Err(e) => return Err(e),
        }
        previous = current;
    }
    Ok(traj)
}

impl Trajectory {
    fn push(&mut self, w: AnalogBeamformer, rate: f64, flagged: bool) {
        self.sparsity.push(w.active_count());
        self.iterates.push(w);
        self.rates.push(rate);
        self.flags.push(flagged);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_rayleigh;
    use crate::constraints::ProjectionKind;
    use crate::objective::{rate_gradient, sum_rate};
    use crate::seeding::{derive_seed, stream};

    fn setup(seed: u64) -> (BlockStructure, ConnectivityMatrix, ChannelRealization, SystemParams) {
        let s = BlockStructure::new(2, 4, 2).unwrap();
        let a = ConnectivityMatrix::round_robin(4, 3).unwrap();
        let h = generate_rayleigh(8, 3, 2, 1, seed).unwrap().samples.remove(0);
        (s, a, h, SystemParams::from_snr_db(0.0).unwrap())
    }

    #[test]
    fn init_is_feasible_and_deterministic() {
        let s = BlockStructure::new(3, 2, 2).unwrap();
        let w = init_beamformer(s, 11);
        let spec = ProjectionSpec::new(ProjectionKind::UnitModulus, s).unwrap();
        assert!(spec.is_feasible(w.matrix()));
        assert_eq!(w, init_beamformer(s, 11));
        assert_ne!(w, init_beamformer(s, 12));
    }

    #[test]
    fn init_phases_are_uniform() {
        let s = BlockStructure::new(1, 100, 100).unwrap();
        let w = init_beamformer(s, 3);
        let mut phases: Vec<f64> = w.matrix().as_slice().iter().map(|z| z.arg()).collect();
        phases.sort_by(f64::total_cmp);
        let n = phases.len() as f64;
        let pi = std::f64::consts::PI;
        let ks = phases
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let cdf = (x + pi) / (2.0 * pi);
                (cdf - k as f64 / n).abs().max(((k + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn beamformer_rejects_off_block_entries() {
        let s = BlockStructure::new(2, 1, 1).unwrap();
        let full = ComplexMatrix::from_fn(2, 2, |_, _| C64::new(1.0, 0.0));
        assert!(AnalogBeamformer::new(full.clone(), s).is_err());
        let w = AnalogBeamformer::from_unmasked(full, s).unwrap();
        assert_eq!(w.matrix()[(0, 1)], C64::new(0.0, 0.0));
        assert_eq!(w.active_count(), 2);
    }

    #[test]
    fn zero_steps_reduce_to_projection() {
        let (s, a, h, p) = setup(1);
        let spec = ProjectionSpec::new(ProjectionKind::Quantized { levels: 4 }, s).unwrap();
        let w0 = init_beamformer(s, 2);
        let grad = rate_gradient(&w0, &a, &h, &p).unwrap();
        let zeros = vec![0.0; s.support_len()];
        let next = pga_step(w0.matrix(), &ComplexMatrix::zeros(8, 4), &grad, &zeros, &zeros, &spec, StepMode::Hard).unwrap();
        assert_eq!(next, spec.project(w0.matrix()));
    }

    #[test]
    fn momentum_vanishes_for_equal_iterates() {
        let (s, a, h, p) = setup(2);
        let spec = ProjectionSpec::new(ProjectionKind::UnitModulus, s).unwrap();
        let w0 = init_beamformer(s, 3);
        let grad = rate_gradient(&w0, &a, &h, &p).unwrap();
        let alpha = vec![0.05; s.support_len()];
        let with = pga_step(w0.matrix(), w0.matrix(), &grad, &alpha, &vec![0.9; s.support_len()], &spec, StepMode::Hard).unwrap();
        let without = pga_step(w0.matrix(), w0.matrix(), &grad, &alpha, &vec![0.0; s.support_len()], &spec, StepMode::Hard).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn small_gradient_steps_ascend() {
        let mut ascents = 0;
        for trial in 0..200u64 {
            let (s, a, h, p) = setup(100 + trial);
            let spec = ProjectionSpec::new(ProjectionKind::UnitModulus, s).unwrap();
            let w0 = init_beamformer(s, derive_seed(trial, stream::INIT, 0));
            let grad = rate_gradient(&w0, &a, &h, &p).unwrap();
            let alpha = vec![1e-3; s.support_len()];
            let zeros = vec![0.0; s.support_len()];
            let next = pga_step(w0.matrix(), w0.matrix(), &grad, &alpha, &zeros, &spec, StepMode::Hard).unwrap();
            let r0 = sum_rate(&w0, &a, &h, &p).unwrap();
            let r1 = sum_rate(&AnalogBeamformer::new(next, s).unwrap(), &a, &h, &p).unwrap();
            if r1 >= r0 {
                ascents += 1;
            }
        }
        assert!(ascents >= 190, "{ascents}/200");
    }

    #[test]
    fn zero_iterations_keep_initial_point() {
        let (s, a, h, p) = setup(3);
        let spec = ProjectionSpec::new(ProjectionKind::UnitModulus, s).unwrap();
        let w0 = init_beamformer(s, 4);
        let traj = run_unfolded(&scalar_hyperparameters(s, 0, 0.1, 0.5), &a, &h, &p, &spec, StepMode::Hard, &w0).unwrap();
        assert_eq!(traj.iterates, vec![w0.clone()]);
        assert_eq!(traj.rates, vec![sum_rate(&w0, &a, &h, &p).unwrap()]);
    }

    #[test]
    fn matches_direct_loop() {
        let (s, a, h, p) = setup(4);
        let spec = ProjectionSpec::new(ProjectionKind::UnitModulus, s).unwrap();
        let w0 = init_beamformer(s, 5);
        let (mu, beta, iters) = (0.03, 0.7, 25);
        let traj = run_unfolded(&scalar_hyperparameters(s, iters, mu, beta), &a, &h, &p, &spec, StepMode::Hard, &w0).unwrap();

        let mut prev = ComplexMatrix::zeros(8, 4);
        let mut cur = w0.matrix().clone();
        for j in 0..iters {
            let g = rate_gradient(&AnalogBeamformer::new(cur.clone(), s).unwrap(), &a, &h, &p).unwrap();
            let mut next = ComplexMatrix::zeros(8, 4);
            for (i, k) in s.support() {
                let x = cur[(i, k)] + g[(i, k)] * mu;
                next[(i, k)] = x + (cur[(i, k)] - prev[(i, k)]) * beta;
            }
            let next = project_unit_modulus(&next, &s);
            assert_eq!(traj.iterates[j + 1].matrix(), &next, "iteration {j}");
            prev = cur;
            cur = next;
        }
        assert!(!traj.any_flagged());
    }

    #[test]
    fn hard_iterates_stay_feasible() {
        let (s, a, h, p) = setup(5);
        let w0 = init_beamformer(s, 6);
        for kind in [
            ProjectionKind::UnitModulus,
            ProjectionKind::Sparse { zeta: 0.9 },
            ProjectionKind::Quantized { levels: 8 },
        ] {
            let spec = ProjectionSpec::new(kind, s).unwrap();
            let theta = HyperparameterSet::constant(s, 15, 0.2, 0.5, 0.05).unwrap();
            let traj = run_unfolded(&theta, &a, &h, &p, &spec, StepMode::Hard, &w0).unwrap();
            assert_eq!(traj.rates.len(), 16);
            for w in &traj.iterates[1..] {
                assert!(spec.is_feasible(w.matrix()), "{kind:?}");
            }
        }
    }

    #[test]
    fn negative_steps_run_as_given() {
        let (s, a, h, p) = setup(6);
        let spec = ProjectionSpec::new(ProjectionKind::UnitModulus, s).unwrap();
        let w0 = init_beamformer(s, 7);
        let theta = scalar_hyperparameters(s, 3, -0.05, 0.0);
        let traj = run_unfolded(&theta, &a, &h, &p, &spec, StepMode::Hard, &w0).unwrap();
        let g = rate_gradient(&w0, &a, &h, &p).unwrap();
        let expect = project_unit_modulus(&w0.matrix().sub(&g.scale(0.05)).unwrap(), &s);
        assert_eq!(traj.iterates[1].matrix(), &expect);
    }

    #[test]
    fn scalar_broadcast() {
        let s = BlockStructure::new(2, 2, 1).unwrap();
        let theta = scalar_hyperparameters(s, 3, 0.1, 0.4);
        assert_eq!(theta.iterations(), 3);
        assert!(theta.alpha.iter().flatten().all(|&x| x == 0.1));
        let dense = theta.dense(&theta.alpha[0]);
        assert_eq!(dense, vec![0.1, 0.0, 0.1, 0.0, 0.0, 0.1, 0.0, 0.1]);
        assert_eq!(theta.parameter_count(false), 2 * 3 * 2 * 2);
        assert_eq!(theta.parameter_count(true), 3 * 3 * 2 * 2);
    }

    #[test]
    fn flat_round_trip() {
        let s = BlockStructure::new(2, 2, 1).unwrap();
        let mut theta = HyperparameterSet::constant(s, 2, 0.1, 0.2, 0.3).unwrap();
        let flat: Vec<f64> = (0..theta.parameter_count(true)).map(|k| k as f64).collect();
        theta.set_flat(&flat, true).unwrap();
        assert_eq!(theta.to_flat(true), flat);
        assert_eq!(theta.locate(0), (ParamFamily::Alpha, 0, 0));
        assert_eq!(theta.locate(5), (ParamFamily::Alpha, 1, 1));
        assert_eq!(theta.locate(8), (ParamFamily::Beta, 0, 0));
        assert_eq!(theta.locate(23), (ParamFamily::Lambda, 1, 3));
        assert_eq!(theta.beta[1][3], 15.0);
    }

    #[test]
    fn rank_guard_freezes_iterate() {
        // One CPU input fed by both outputs of a single panel whose phases can cancel
        let s = BlockStructure::new(1, 1, 2).unwrap();
        let a = ConnectivityMatrix::from_binary(&[vec![1], vec![1]]).unwrap();
        let h = ChannelRealization::new(vec![ComplexMatrix::identity(1)]).unwrap();
        let p = SystemParams::new(1.0, 1.0).unwrap();
        let spec = ProjectionSpec::new(ProjectionKind::Sparse { zeta: 0.5 }, s).unwrap();
        let w0 = AnalogBeamformer::new(ComplexMatrix::new(1, 2, vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).unwrap(), s).unwrap();
        // β = -1 pulls every entry back to zero on the first step: W_0 + (-1)(W_0 - 0) = 0
        let theta = HyperparameterSet::constant(s, 2, 0.0, -1.0, 0.0).unwrap();
        let traj = run_unfolded(&theta, &a, &h, &p, &spec, StepMode::Hard, &w0).unwrap();
        assert_eq!(traj.flags, vec![false, true, false]);
        assert_eq!(traj.iterates[1], w0);
        assert_eq!(traj.rates[1], traj.rates[0]);
    }
}
