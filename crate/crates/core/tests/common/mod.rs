//! Random problem instances and independent dense-matrix oracles shared by the test targets.
#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use modbf::channel::{generate_rayleigh, ChannelRealization, SystemParams};
use modbf::constraints::{project_quantized, project_sparse, surrogate_magnitude, surrogate_phase, ProjectionKind, SurrogateSpec};
use modbf::objective::ConnectivityMatrix;
use modbf::optimizer::{init_beamformer, AnalogBeamformer};
use modbf::seeding::rng_from;
use modbf::{BlockStructure, ComplexMatrix, C64};
use nalgebra::DMatrix;
use rand::Rng;

pub struct Instance {
    pub w: AnalogBeamformer,
    pub a: ConnectivityMatrix,
    pub h: ChannelRealization,
    pub p: SystemParams,
}

/// Random instance with `M = N·P` antennas, `T` CPU inputs, `K` users and `B` bins.
pub fn instance(m: usize, t: usize, k: usize, b: usize, seed: u64) -> Instance {
    let mut rng = rng_from(seed);
    let panels = if m.is_multiple_of(2) && rng.random_bool(0.5) { 2 } else { 1 };
    let l = t.div_ceil(panels) + rng.random_range(0..2);
    let s = BlockStructure::new(panels, m / panels, l).unwrap();
    Instance {
        w: init_beamformer(s, rng.random()),
        a: ConnectivityMatrix::round_robin(l * panels, t).unwrap(),
        h: generate_rayleigh(m, k, b, 1, rng.random()).unwrap().samples.remove(0),
        p: SystemParams::from_snr_db(rng.random_range(-5.0..10.0)).unwrap(),
    }
}

/// Instance with dimensions drawn from `M ∈ 5..=12`, `T ∈ 2..=4`, `K ∈ 2..=6`, `B ∈ 1..=3`.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = rng_from(seed ^ 0x5eed);
    let m = rng.random_range(5..=12);
    let t = rng.random_range(2..=4);
    let k = rng.random_range(2..=6);
    let b = rng.random_range(1..=3);
    instance(m, t, k, b, seed)
}

pub fn to_dense(x: &ComplexMatrix) -> DMatrix<C64> {
    DMatrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)])
}

pub fn from_dense(x: &DMatrix<C64>) -> ComplexMatrix {
    ComplexMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)])
}

fn projector(g: &DMatrix<C64>) -> DMatrix<C64> {
    let gh = g.adjoint();
    g * (&gh * g).try_inverse().expect("G^H G invertible") * gh
}

/// Rate through the `M×M` determinant, using a general LU determinant.
pub fn rate_mxm(g: &ComplexMatrix, h: &ChannelRealization, p: &SystemParams) -> f64 {
    let g = to_dense(g);
    let m = g.nrows();
    let proj = projector(&g);
    let c = p.snr();
    let total: f64 = h
        .matrices()
        .iter()
        .map(|hb| {
            let hb = to_dense(hb);
            let q = DMatrix::<C64>::identity(m, m) + &proj * &hb * hb.adjoint() * C64::new(c, 0.0);
            q.determinant().re.log2()
        })
        .sum();
    total / h.bins() as f64
}

/// Rate gradient written out term by term in its `M×M` form with general inverses,
/// restricted to the block support.
pub fn gradient_mxm(inst: &Instance) -> ComplexMatrix {
    let w = to_dense(inst.w.matrix());
    let a = to_dense(inst.a.matrix());
    let g = &w * &a;
    let m = g.nrows();
    let gh = g.adjoint();
    let ginv = (&gh * &g).try_inverse().unwrap();
    let proj = &g * &ginv * &gh;
    let eye = DMatrix::<C64>::identity(m, m);
    let c = C64::new(inst.p.snr(), 0.0);
    let mut acc = DMatrix::<C64>::zeros(w.nrows(), w.ncols());
    for hb in inst.h.matrices() {
        let hb = to_dense(hb);
        let hh = &hb * hb.adjoint();
        let q = (&eye + &proj * &hh * c).try_inverse().unwrap();
        let term = &a * &ginv * &gh * &hh * q * (&eye - &proj) * c;
        acc += term.adjoint();
    }
    acc /= C64::new(inst.h.bins() as f64, 0.0);
    let s = inst.w.structure();
    ComplexMatrix::from_fn(acc.nrows(), acc.ncols(), |i, j| {
        if s.on_block(i, j) {
            acc[(i, j)]
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Random block-supported direction with unit Frobenius norm.
pub fn direction(s: &BlockStructure, seed: u64) -> ComplexMatrix {
    let mut rng = rng_from(seed);
    let d = ComplexMatrix::from_fn(s.total_rows(), s.total_cols(), |i, j| {
        if s.on_block(i, j) {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let n = d.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    d.scale(1.0 / n)
}

/// `Re tr(X^H Y)`
pub fn real_inner(x: &ComplexMatrix, y: &ComplexMatrix) -> f64 {
    x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a.conj() * b).re).sum()
}

pub fn shifted(w: &AnalogBeamformer, d: &ComplexMatrix, eps: f64) -> AnalogBeamformer {
    AnalogBeamformer::new(w.matrix().add(&d.scale(eps)).unwrap(), *w.structure()).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> ComplexMatrix {
    let mut rng = rng_from(seed);
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
    })
}

pub fn kinds() -> [ProjectionKind; 4] {
    [
        ProjectionKind::UnitModulus,
        ProjectionKind::Sparse { zeta: 0.5 },
        ProjectionKind::Quantized { levels: 16 },
        ProjectionKind::Quantized { levels: 3 },
    ]
}

pub fn off_block_is_zero(w: &ComplexMatrix, s: &BlockStructure) -> bool {
    (0..w.rows()).all(|i| (0..w.cols()).all(|j| s.on_block(i, j) || w[(i, j)] == C64::new(0.0, 0.0)))
}

/// Largest gap between surrogate and hard projection over a grid, skipping points within a
/// fixed band around each discontinuity.
pub fn magnitude_gap(sharpness: f64) -> f64 {
    let s = BlockStructure::new(1, 1, 1).unwrap();
    let spec = SurrogateSpec::new(sharpness, 0.5, 40.0).unwrap();
    let delta = 0.05;
    let mut worst: f64 = 0.0;
    for i in 0..4000 {
        let r = (i as f64 + 0.5) / 2000.0;
        if (r - 0.5).abs() < delta {
            continue;
        }
        for phase in [-2.0, 0.3, 1.7] {
            let w = ComplexMatrix::from_fn(1, 1, |_, _| C64::from_polar(r, phase));
            let soft = surrogate_magnitude(&w, &s, &spec)[(0, 0)];
            let hard = project_sparse(&w, &s, 0.5)[(0, 0)];
            worst = worst.max((soft - hard).norm());
        }
    }
    worst
}

pub fn phase_gap(sharpness: f64, levels: u32) -> f64 {
    let s = BlockStructure::new(1, 1, 1).unwrap();
    let spec = SurrogateSpec::new(40.0, 0.5, sharpness).unwrap();
    let delta = 0.1;
    let step = TAU / levels as f64;
    let mut worst: f64 = 0.0;
    for i in 0..8000 {
        let psi = (i as f64 + 0.5) / 8000.0 * TAU;
        // decision boundaries of the quantizer sit half a step past each level
        let offset = (psi / step - 0.5).rem_euclid(1.0) * step;
        if offset.min(step - offset) < delta {
            continue;
        }
        let w = ComplexMatrix::from_fn(1, 1, |_, _| C64::from_polar(0.8, psi - PI));
        let soft = surrogate_phase(&w, &s, levels, &spec)[(0, 0)];
        let hard = project_quantized(&w, &s, levels)[(0, 0)];
        worst = worst.max((soft - hard).norm());
    }
    worst
}
