//! Projections onto the unit-modulus, sparse and quantized feasible sets, and
//! the sigmoid surrogates used when the projection has to be differentiated.
//!
//! Every operator acts entrywise on the block-diagonal support and zeroes the
//! off-block entries. The per-entry kernels also return the real 2x2 Jacobian
//! `[[∂Re y/∂Re z, ∂Re y/∂Im z], [∂Im y/∂Re z, ∂Im y/∂Im z]]` for reverse-mode use.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlockStructure, ComplexMatrix, C64};

/// Entries whose modulus is within this many ulps of 1 count as already projected.
const UNIT_SLACK: f64 = 8.0 * f64::EPSILON;

/// Tolerance used by the feasibility checks.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-12;

/// Magnitude below which a projection input is treated as non-differentiable.
pub const DIFFERENTIABILITY_FLOOR: f64 = 1e-12;

/// Real 2x2 Jacobian of an entrywise map, row-major.
pub type EntryJacobian = [f64; 4];

/// Feasible-set selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectionKind {
    UnitModulus,
    Sparse { zeta: f64 },
    Quantized { levels: u32 },
}

/// A feasible set together with the beamformer layout it applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub kind: ProjectionKind,
    pub structure: BlockStructure,
}

impl ProjectionSpec {
    pub fn new(kind: ProjectionKind, structure: BlockStructure) -> Result<Self> {
        match kind {
            ProjectionKind::Sparse { zeta } if !(zeta >= 0.0) => {
                return Err(Error::InvalidArgument(format!("sparse threshold must be >= 0, got {zeta}")))
            }
            ProjectionKind::Quantized { levels } if levels < 2 => {
                return Err(Error::InvalidArgument(format!("need at least 2 quantization levels, got {levels}")))
            }
            _ => {}
        }
        Ok(Self { kind, structure })
    }

    /// Hard projection.
    pub fn project(&self, w: &ComplexMatrix) -> ComplexMatrix {
        match self.kind {
            ProjectionKind::UnitModulus => project_unit_modulus(w, &self.structure),
            ProjectionKind::Sparse { zeta } => project_sparse(w, &self.structure, zeta),
            ProjectionKind::Quantized { levels } => project_quantized(w, &self.structure, levels),
        }
    }

    /// Differentiable stand-in: exact normalisation for the unit-modulus set,
    /// sigmoid surrogates for the sparse and quantized sets.
    pub fn surrogate(&self, w: &ComplexMatrix, spec: &SurrogateSpec) -> ComplexMatrix {
        match self.kind {
            ProjectionKind::UnitModulus => project_unit_modulus(w, &self.structure),
            ProjectionKind::Sparse { .. } => surrogate_magnitude(w, &self.structure, spec),
            ProjectionKind::Quantized { levels } => surrogate_phase(w, &self.structure, levels, spec),
        }
    }

    /// Value and Jacobian of the differentiable map for one on-block entry.
    pub(crate) fn surrogate_entry(&self, z: C64, spec: &SurrogateSpec) -> Result<(C64, EntryJacobian)> {
        let r = z.norm();
        if r < DIFFERENTIABILITY_FLOOR {
            return Err(Error::NonDifferentiable { magnitude: r });
        }
        Ok(match self.kind {
            ProjectionKind::UnitModulus => unit_modulus_entry_jacobian(z),
            ProjectionKind::Sparse { .. } => surrogate_magnitude_entry(z, spec),
            ProjectionKind::Quantized { levels } => surrogate_phase_entry(z, levels, spec.s_p),
        })
    }

    /// Membership test for the feasible set, including the block mask.
    pub fn is_feasible(&self, w: &ComplexMatrix) -> bool {
        let s = &self.structure;
        if w.shape() != s.shape() {
            return false;
        }
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                let z = w[(i, j)];
                if !s.on_block(i, j) {
                    if z != C64::new(0.0, 0.0) {
                        return false;
                    }
                    continue;
                }
                let r = z.norm();
                let ok = match self.kind {
                    ProjectionKind::UnitModulus => (r - 1.0).abs() <= FEASIBILITY_TOLERANCE,
                    ProjectionKind::Sparse { .. } => r == 0.0 || (r - 1.0).abs() <= FEASIBILITY_TOLERANCE,
                    ProjectionKind::Quantized { levels } => {
                        let steps = z.arg() * levels as f64 / TAU;
                        (r - 1.0).abs() <= FEASIBILITY_TOLERANCE
                            && (steps - steps.round()).abs() <= FEASIBILITY_TOLERANCE
                    }
                };
                if !ok {
                    return false;
                }
            }
        }
        true
    }
}

/// Sharpness and shift of the sigmoid surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    /// Magnitude sharpness `s_m`.
    pub s_m: f64,
    /// Magnitude shift `ζ_m`.
    pub zeta_m: f64,
    /// Phase sharpness `s_p`.
    pub s_p: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            s_m: 40.0,
            zeta_m: 0.5,
            s_p: 40.0,
        }
    }
}

impl SurrogateSpec {
    pub fn new(s_m: f64, zeta_m: f64, s_p: f64) -> Result<Self> {
        if !(s_m > 0.0 && s_p > 0.0 && (0.0..=1.0).contains(&zeta_m)) {
            return Err(Error::InvalidArgument(format!(
                "surrogate needs s_m, s_p > 0 and zeta_m in [0,1], got {s_m}, {zeta_m}, {s_p}"
            )));
        }
        Ok(Self { s_m, zeta_m, s_p })
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map_support(w: &ComplexMatrix, s: &BlockStructure, f: impl Fn(C64) -> C64) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(w.rows(), w.cols());
    for (i, j) in s.support() {
        out[(i, j)] = f(w[(i, j)]);
    }
    out
}

#[inline]
fn normalize(z: C64) -> C64 {
    let r = z.norm();
    if r == 0.0 {
        C64::new(1.0, 0.0)
    } else if (r - 1.0).abs() <= UNIT_SLACK {
        z
    } else {
        z / r
    }
}

/// `W_ij / |W_ij|` on the support; zero entries map to `1 + 0i`.
pub fn project_unit_modulus(w: &ComplexMatrix, s: &BlockStructure) -> ComplexMatrix {
    map_support(w, s, normalize)
}

/// Keeps and normalises entries with `|W_ij| ≥ ζ`, zeroes the rest.
pub fn project_sparse(w: &ComplexMatrix, s: &BlockStructure, zeta: f64) -> ComplexMatrix {
    map_support(w, s, |z| {
        if z.norm() >= zeta {
            normalize(z)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Index of the nearest multiple of `2π/Q` to the phase of `z`; ties go to the larger phase.
pub fn quantize_phase_index(z: C64, levels: u32) -> u32 {
    let q = levels as f64;
    let step = TAU / q;
    let k = (z.arg() / step + 0.5).floor();
    (k.rem_euclid(q)) as u32
}

/// Unit-modulus entries whose phase is the nearest multiple of `2π/Q`.
pub fn project_quantized(w: &ComplexMatrix, s: &BlockStructure, levels: u32) -> ComplexMatrix {
    let step = TAU / levels as f64;
    map_support(w, s, |z| {
        let k = quantize_phase_index(z, levels);
        if k == 0 {
            C64::new(1.0, 0.0)
        } else {
            C64::from_polar(1.0, k as f64 * step)
        }
    })
}

/// Phase preserved, magnitude replaced by `σ(s_m (|W_ij| − ζ_m))`.
pub fn surrogate_magnitude(w: &ComplexMatrix, s: &BlockStructure, spec: &SurrogateSpec) -> ComplexMatrix {
    map_support(w, s, |z| surrogate_magnitude_entry(z, spec).0)
}

/// Unit-modulus entries with the smoothed staircase phase
/// `φ̂ = (2π/Q) Σ_{q=1..Q} σ(s_p (ψ − 2π(q − 0.5)/Q))`, `ψ = ∠W_ij ∈ [0, 2π)`.
pub fn surrogate_phase(w: &ComplexMatrix, s: &BlockStructure, levels: u32, spec: &SurrogateSpec) -> ComplexMatrix {
    map_support(w, s, |z| surrogate_phase_entry(z, levels, spec.s_p).0)
}

/// Phase of `z` in `[0, 2π)`.
#[inline]
pub fn phase_0_2pi(z: C64) -> f64 {
    let a = z.arg();
    if a < 0.0 {
        // a + TAU can round up to TAU for a = -0 or tiny negatives
        let w = a + TAU;
        if w >= TAU {
            0.0
        } else {
            w
        }
    } else {
        a
    }
}

/// The smoothed staircase and its derivative with respect to `ψ`.
pub fn smoothed_phase(psi: f64, levels: u32, s_p: f64) -> (f64, f64) {
    let q = levels as f64;
    let step = TAU / q;
    let mut value = 0.0;
    let mut slope = 0.0;
    for idx in 1..=levels {
        let sg = logistic(s_p * (psi - step * (idx as f64 - 0.5)));
        value += sg;
        slope += s_p * sg * (1.0 - sg);
    }
    (step * value, step * slope)
}

pub(crate) fn unit_modulus_entry_jacobian(z: C64) -> (C64, EntryJacobian) {
    let r = z.norm();
    let r3 = r * r * r;
    let (a, b) = (z.re, z.im);
    (z / r, [b * b / r3, -a * b / r3, -a * b / r3, a * a / r3])
}

pub(crate) fn surrogate_magnitude_entry(z: C64, spec: &SurrogateSpec) -> (C64, EntryJacobian) {
    let r = z.norm();
    if r == 0.0 {
        let m = logistic(-spec.s_m * spec.zeta_m);
        return (C64::new(m, 0.0), [0.0; 4]);
    }
    let sg = logistic(spec.s_m * (r - spec.zeta_m));
    // y = z g(r), g = σ/r
    let g = sg / r;
    let dg = (spec.s_m * sg * (1.0 - sg) * r - sg) / (r * r);
    let (a, b) = (z.re, z.im);
    let jac = [
        g + a * a * dg / r,
        a * b * dg / r,
        a * b * dg / r,
        g + b * b * dg / r,
    ];
    (z * g, jac)
}

pub(crate) fn surrogate_phase_entry(z: C64, levels: u32, s_p: f64) -> (C64, EntryJacobian) {
    let psi = phase_0_2pi(z);
    let (phi, slope) = smoothed_phase(psi, levels, s_p);
    let (sin, cos) = phi.sin_cos();
    let r2 = z.norm_sqr();
    if r2 == 0.0 {
        return (C64::new(cos, sin), [0.0; 4]);
    }
    let (a, b) = (z.re, z.im);
    // dψ/da = -b/r², dψ/db = a/r²
    let (dpa, dpb) = (-b / r2, a / r2);
    let jac = [
        -sin * slope * dpa,
        -sin * slope * dpb,
        cos * slope * dpa,
        cos * slope * dpb,
    ];
    (C64::new(cos, sin), jac)
}

/// Phase assigned by the surrogate as `s_p → 0`, `(2π/Q)(Q/2) = π`.
pub const SURROGATE_PHASE_FLAT_LIMIT: f64 = PI;
