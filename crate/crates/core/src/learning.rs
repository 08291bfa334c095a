//! Learning the unrolled optimizer's hyperparameters: losses, reverse-mode
//! hyperparameter gradients, a finite-difference oracle, mini-batch SGD, CSI-robust
//! training, transfer across user and panel counts, and `θ` persistence.

use std::f64::consts::LN_2;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::channel::{ChannelDataset, ChannelRealization, SystemParams};
use crate::constraints::{unit_modulus_entry_jacobian, ProjectionKind, ProjectionSpec, SurrogateSpec};
use crate::error::{Error, Result};
use crate::linalg::{BlockStructure, ComplexMatrix, C64};
use crate::objective::{rank_guard_fires, ConnectivityMatrix, RANK_GUARD_LOADING};
use crate::optimizer::{init_beamformer, AnalogBeamformer, HyperparameterSet};
use crate::seeding::{derive_seed, rng_from, stream};

/// A channel together with the initial beamformer the optimizer starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub channel: ChannelRealization,
    pub init: AnalogBeamformer,
}

/// Pairs every sample of `d` with `W_0` drawn from the initialisation stream of `seed`.
///
/// Sample `i` always receives the same `W_0`, so methods compared on the same
/// dataset share their starting points.
pub fn with_initializations(d: &ChannelDataset, structure: BlockStructure, seed: u64) -> Vec<TrainingSample> {
    d.samples
        .iter()
        .enumerate()
        .map(|(i, h)| TrainingSample {
            channel: h.clone(),
            init: init_beamformer(structure, derive_seed(seed, stream::INIT, i as u64)),
        })
        .collect()
}

/// What the unrolled loss optimizes and how the forward pass is smoothed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub projection: ProjectionSpec,
    pub surrogate: SurrogateSpec,
    /// Weight of `(‖W_J‖₁ − S_max)²`; zero disables the budget term.
    pub gamma: f64,
    pub s_max: f64,
    /// CSI error variance of the channels the optimizer sees; rates always use the clean channels.
    pub sigma_e2: f64,
    pub noise_seed: u64,
    /// Whether `λ` is a trainable parameter.
    pub train_lambda: bool,
}

impl LossSpec {
    pub fn unconstrained(structure: BlockStructure) -> Self {
        Self {
            projection: ProjectionSpec {
                kind: ProjectionKind::UnitModulus,
                structure,
            },
            surrogate: SurrogateSpec::default(),
            gamma: 0.0,
            s_max: 0.0,
            sigma_e2: 0.0,
            noise_seed: 0,
            train_lambda: false,
        }
    }

    /// Sparse phase shifters with an active-component budget.
    pub fn power_aware(structure: BlockStructure, zeta: f64, gamma: f64, s_max: f64) -> Result<Self> {
        if !(gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
        }
        if s_max > structure.support_len() as f64 || !(s_max >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "S_max = {s_max} outside [0, {}]",
                structure.support_len()
            )));
        }
        Ok(Self {
            projection: ProjectionSpec::new(ProjectionKind::Sparse { zeta }, structure)?,
            gamma,
            s_max,
            train_lambda: true,
            ..Self::unconstrained(structure)
        })
    }

    pub fn quantized(structure: BlockStructure, levels: u32) -> Result<Self> {
        Ok(Self {
            projection: ProjectionSpec::new(ProjectionKind::Quantized { levels }, structure)?,
            ..Self::unconstrained(structure)
        })
    }

    pub fn with_csi_noise(self, sigma_e2: f64, seed: u64) -> Result<Self> {
        if !(sigma_e2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("CSI error variance must be >= 0, got {sigma_e2}")));
        }
        Ok(Self {
            sigma_e2,
            noise_seed: seed,
            ..self
        })
    }

    pub fn with_surrogate(self, surrogate: SurrogateSpec) -> Self {
        Self { surrogate, ..self }
    }
}

/// Value of the unrolled loss and its components, averaged over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// `−ln(1+j) · mean R(W_j)` for `j = 1..J`.
    pub per_iteration: Vec<f64>,
    /// `γ · mean (‖W_J‖₁ − S_max)²`.
    pub penalty: f64,
    /// Samples whose trajectory hit the rank guard.
    pub flagged: usize,
}

/// Weight of iterate `j` in the loss.
pub fn iteration_weight(j: usize) -> f64 {
    (1.0 + j as f64).ln()
}

struct ThetaVars {
    alpha: Vec<Var>,
    beta: Vec<Var>,
    lambda: Vec<Option<Var>>,
}

struct GramNodes {
    g: Var,
    gh: Var,
    ginv: Var,
    regularized: bool,
}

struct Forward {
    rate_terms: Vec<Var>,
    final_l1: Option<Var>,
    flagged: bool,
}

fn real_dense(theta: &HyperparameterSet, values: &[f64]) -> ComplexMatrix {
    let (r, c) = theta.structure.shape();
    let d = theta.dense(values);
    ComplexMatrix::new(r, c, d.into_iter().map(|x| C64::new(x, 0.0)).collect()).expect("dense size")
}

fn gram_nodes(tape: &mut Tape, w: Var, a: Var) -> Result<GramNodes> {
    let g = tape.matmul(w, a)?;
    let gh = tape.adjoint(g);
    let mut gram = tape.matmul(gh, g)?;
    if !tape.value(gram).is_finite() {
        return Err(Error::NonFinite("equivalent channel"));
    }
    let regularized = rank_guard_fires(tape.value(gram))?.is_none();
    if regularized {
        gram = tape.add_identity(gram, RANK_GUARD_LOADING)?;
    }
    let ginv = tape.inverse_hpd(gram)?;
    Ok(GramNodes {
        g,
        gh,
        ginv,
        regularized,
    })
}

/// Rate in bits and/or the masked rate gradient, as tape nodes.
#[allow(clippy::too_many_arguments)]
fn rate_nodes(
    tape: &mut Tape,
    gn: &GramNodes,
    hs: &[Var],
    ah: Var,
    c: f64,
    structure: BlockStructure,
    want_rate: bool,
    want_grad: bool,
) -> Result<(Option<Var>, Option<Var>)> {
    let bins = hs.len() as f64;
    let mut lds = Vec::new();
    let mut ds = Vec::new();
    for &h in hs {
        let f = tape.matmul(gn.gh, h)?;
        let gif = tape.matmul(gn.ginv, f)?;
        let fh = tape.adjoint(f);
        let q = tape.matmul(fh, gif)?;
        let q = tape.scale(q, c);
        let k = tape.add_identity(q, 1.0)?;
        if want_rate {
            lds.push((tape.ln_det_hpd(k)?, 1.0 / (bins * LN_2)));
        }
        if want_grad {
            // (I − P) H K^{-1} F^H (G^H G)^{-1}
            let kinv = tape.inverse_hpd(k)?;
            let gifh = tape.adjoint(gif);
            let r = tape.matmul(kinv, gifh)?;
            let u = tape.matmul(h, r)?;
            let v = tape.matmul(gn.gh, u)?;
            let pv = tape.matmul(gn.ginv, v)?;
            let gpv = tape.matmul(gn.g, pv)?;
            ds.push((tape.sub(u, gpv)?, c / bins));
        }
    }
    let rate = if want_rate { Some(tape.weighted_sum(&lds)?) } else { None };
    let grad = if want_grad {
        let acc = tape.weighted_sum(&ds)?;
        let full = tape.matmul(acc, ah)?;
        Some(tape.mask(full, structure)?)
    } else {
        None
    };
    Ok((rate, grad))
}

/// `e^{j∠W}` on nonzero entries, zero elsewhere.
fn phase_nodes(tape: &mut Tape, w: Var) -> Result<Var> {
    let v = tape.value(w);
    let mut out = ComplexMatrix::zeros(v.rows(), v.cols());
    let mut jac = vec![[0.0; 4]; v.rows() * v.cols()];
    for (k, &z) in v.as_slice().iter().enumerate() {
        if z.norm() > 0.0 {
            let (y, j) = unit_modulus_entry_jacobian(z);
            out.as_mut_slice()[k] = y;
            jac[k] = j;
        }
    }
    tape.entrywise(w, out, jac)
}

/// `Σ_ij |W_ij|` as a `1 x 1` node.
fn l1_node(tape: &mut Tape, w: Var) -> Result<Var> {
    let v = tape.value(w);
    let (rows, cols) = v.shape();
    let mut abs = ComplexMatrix::zeros(rows, cols);
    let mut jac = vec![[0.0; 4]; rows * cols];
    for (k, &z) in v.as_slice().iter().enumerate() {
        let r = z.norm();
        if r > 0.0 {
            abs.as_mut_slice()[k] = C64::new(r, 0.0);
            jac[k] = [z.re / r, z.im / r, 0.0, 0.0];
        }
    }
    let abs = tape.entrywise(w, abs, jac)?;
    let left = tape.constant(ComplexMatrix::from_fn(1, rows, |_, _| C64::new(1.0, 0.0)));
    let right = tape.constant(ComplexMatrix::from_fn(cols, 1, |_, _| C64::new(1.0, 0.0)));
    let row = tape.matmul(left, abs)?;
    tape.matmul(row, right)
}

fn project_nodes(tape: &mut Tape, z: Var, spec: &LossSpec) -> Result<Var> {
    let s = spec.projection.structure;
    let v = tape.value(z);
    let (rows, cols) = v.shape();
    let mut out = ComplexMatrix::zeros(rows, cols);
    let mut jac = vec![[0.0; 4]; rows * cols];
    for (i, j) in s.support() {
        let (y, jj) = spec.projection.surrogate_entry(v[(i, j)], &spec.surrogate)?;
        out[(i, j)] = y;
        jac[i * cols + j] = jj;
    }
    tape.entrywise(z, out, jac)
}

/// Builds the unrolled forward pass of one sample on `tape`.
#[allow(clippy::too_many_arguments)]
fn forward_sample(
    tape: &mut Tape,
    vars: &ThetaVars,
    a: &ConnectivityMatrix,
    sample: &TrainingSample,
    observed: &ChannelRealization,
    p: &SystemParams,
    spec: &LossSpec,
    iterations: usize,
) -> Result<Forward> {
    let s = spec.projection.structure;
    let c = p.snr();
    let robust = observed != &sample.channel;
    let av = tape.constant(a.matrix().clone());
    let ah = tape.constant(a.matrix().adjoint());
    let clean: Vec<Var> = sample.channel.matrices().iter().map(|h| tape.constant(h.clone())).collect();
    let seen: Vec<Var> = if robust {
        observed.matrices().iter().map(|h| tape.constant(h.clone())).collect()
    } else {
        clean.clone()
    };

    let mut w = tape.constant(sample.init.matrix().clone());
    let mut prev = tape.constant(ComplexMatrix::zeros(s.total_rows(), s.total_cols()));
    let mut gn = gram_nodes(tape, w, av)?;
    let mut flagged = gn.regularized;
    let mut grad = if iterations > 0 {
        rate_nodes(tape, &gn, &seen, ah, c, s, false, true)?.1
    } else {
        None
    };
    let mut rate_terms = Vec::with_capacity(iterations);
    let mut last_rate: Option<Var> = None;

    for j in 0..iterations {
        let mut g = grad.take().expect("gradient built for every stepping iterate");
        if let Some(lam) = vars.lambda[j] {
            let phase = phase_nodes(tape, w)?;
            let pen = tape.hadamard(lam, phase)?;
            g = tape.sub(g, pen)?;
        }
        let step = tape.hadamard(vars.alpha[j], g)?;
        let diff = tape.sub(w, prev)?;
        let mom = tape.hadamard(vars.beta[j], diff)?;
        let z = tape.weighted_sum(&[(w, 1.0), (step, 1.0), (mom, 1.0)])?;
        let candidate = project_nodes(tape, z, spec)?;

        let cand_gn = gram_nodes(tape, candidate, av)?;
        let need_grad = j + 1 < iterations;
        if cand_gn.regularized {
            flagged = true;
            let rate = match last_rate {
                Some(r) => r,
                None => rate_nodes(tape, &gn, &clean, ah, c, s, true, false)?.0.expect("rate requested"),
            };
            rate_terms.push(rate);
            last_rate = Some(rate);
            if need_grad {
                grad = rate_nodes(tape, &gn, &seen, ah, c, s, false, true)?.1;
            }
            prev = w;
            continue;
        }
        let rate = if robust {
            let r = rate_nodes(tape, &cand_gn, &clean, ah, c, s, true, false)?.0;
            if need_grad {
                grad = rate_nodes(tape, &cand_gn, &seen, ah, c, s, false, true)?.1;
            }
            r
        } else {
            let (r, gr) = rate_nodes(tape, &cand_gn, &clean, ah, c, s, true, need_grad)?;
            grad = gr;
            r
        }
        .expect("rate requested");
        rate_terms.push(rate);
        last_rate = Some(rate);
        prev = w;
        w = candidate;
        gn = cand_gn;
    }
    let final_l1 = if spec.gamma != 0.0 { Some(l1_node(tape, w)?) } else { None };
    Ok(Forward {
        rate_terms,
        final_l1,
        flagged,
    })
}

fn check_batch(theta: &HyperparameterSet, batch: &[TrainingSample], spec: &LossSpec) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss needs a non-empty batch".into()));
    }
    if theta.structure != spec.projection.structure {
        return Err(Error::InvalidArgument("hyperparameters and projection disagree on the block structure".into()));
    }
    Ok(())
}

/// Loss and, optionally, its gradient with respect to `θ.to_flat(spec.train_lambda)`.
pub fn loss_and_gradient(
    theta: &HyperparameterSet,
    a: &ConnectivityMatrix,
    batch: &[TrainingSample],
    p: &SystemParams,
    spec: &LossSpec,
    with_gradient: bool,
) -> Result<(LossReport, Option<Vec<f64>>)> {
    check_batch(theta, batch, spec)?;
    let iterations = theta.iterations();
    let n = batch.len() as f64;
    let support = theta.structure.support_len();
    let mut per_iteration = vec![0.0; iterations];
    let mut penalty = 0.0;
    let mut flagged = 0;
    let mut grad = with_gradient.then(|| vec![0.0; theta.parameter_count(spec.train_lambda)]);

    for (idx, sample) in batch.iter().enumerate() {
        let observed = if spec.sigma_e2 > 0.0 {
            sample
                .channel
                .perturbed(spec.sigma_e2, derive_seed(spec.noise_seed, stream::ROBUST_TRAIN, idx as u64))?
        } else {
            sample.channel.clone()
        };
        let mut tape = Tape::new();
        let mk = |tape: &mut Tape, values: &[f64], train: bool| {
            let m = real_dense(theta, values);
            if train && with_gradient {
                tape.variable(m)
            } else {
                tape.constant(m)
            }
        };
        let vars = ThetaVars {
            alpha: theta.alpha.iter().map(|v| mk(&mut tape, v, true)).collect(),
            beta: theta.beta.iter().map(|v| mk(&mut tape, v, true)).collect(),
            lambda: theta
                .lambda
                .iter()
                .map(|v| {
                    (spec.train_lambda || v.iter().any(|&x| x != 0.0)).then(|| mk(&mut tape, v, spec.train_lambda))
                })
                .collect(),
        };
        let fw = forward_sample(&mut tape, &vars, a, sample, &observed, p, spec, iterations)?;
        flagged += usize::from(fw.flagged);

        let mut terms: Vec<(Var, f64)> = Vec::with_capacity(iterations + 1);
        for (j, &r) in fw.rate_terms.iter().enumerate() {
            let wgt = iteration_weight(j + 1);
            per_iteration[j] -= wgt * tape.scalar(r) / n;
            terms.push((r, -wgt / n));
        }
        if let Some(l1) = fw.final_l1 {
            // γ (‖W_J‖₁ − S_max)², seeded into the backward pass as 2γ(‖W_J‖₁ − S_max)/n
            let excess = tape.scalar(l1) - spec.s_max;
            penalty += spec.gamma * excess * excess / n;
            terms.push((l1, 2.0 * spec.gamma * excess / n));
        }
        if let Some(grad) = grad.as_mut() {
            if terms.is_empty() {
                continue;
            }
            let out = tape.weighted_sum(&terms)?;
            let adj = tape.backward(out);
            let mut offset = 0;
            let fams: Vec<&[Var]> = vec![&vars.alpha, &vars.beta];
            for fam in fams {
                for &v in fam {
                    add_support(&mut grad[offset..offset + support], adj.get(v), &theta.structure);
                    offset += support;
                }
            }
            if spec.train_lambda {
                for v in &vars.lambda {
                    let v = v.expect("trainable lambda always has a node");
                    add_support(&mut grad[offset..offset + support], adj.get(v), &theta.structure);
                    offset += support;
                }
            }
        }
    }
    let total = per_iteration.iter().sum::<f64>() + penalty;
    Ok((
        LossReport {
            total,
            per_iteration,
            penalty,
            flagged,
        },
        grad,
    ))
}

fn add_support(out: &mut [f64], adj: Option<&ComplexMatrix>, s: &BlockStructure) {
    if let Some(m) = adj {
        for (k, (i, j)) in s.support().enumerate() {
            out[k] += m[(i, j)].re;
        }
    }
}

/// `−(1/|batch|) Σ Σ_{j=1..J} ln(1+j) R(W_j)` with the smoothed forward pass.
pub fn unfolded_loss(
    theta: &HyperparameterSet,
    a: &ConnectivityMatrix,
    batch: &[TrainingSample],
    p: &SystemParams,
    spec: &LossSpec,
) -> Result<LossReport> {
    let spec = LossSpec {
        gamma: 0.0,
        sigma_e2: 0.0,
        ..*spec
    };
    Ok(loss_and_gradient(theta, a, batch, p, &spec, false)?.0)
}

/// [`unfolded_loss`] plus `γ (‖W_J‖₁ − S_max)²`, averaged over the batch.
pub fn power_aware_loss(
    theta: &HyperparameterSet,
    a: &ConnectivityMatrix,
    batch: &[TrainingSample],
    p: &SystemParams,
    spec: &LossSpec,
    gamma: f64,
    s_max: f64,
) -> Result<LossReport> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    let spec = LossSpec {
        gamma,
        s_max,
        sigma_e2: 0.0,
        ..*spec
    };
    Ok(loss_and_gradient(theta, a, batch, p, &spec, false)?.0)
}

/// Trajectories driven by `H + E`, rates scored on the clean `H`.
pub fn robust_loss(
    theta: &HyperparameterSet,
    a: &ConnectivityMatrix,
    batch: &[TrainingSample],
    p: &SystemParams,
    spec: &LossSpec,
    sigma_e2: f64,
    seed: u64,
) -> Result<LossReport> {
    let spec = spec.with_csi_noise(sigma_e2, seed)?;
    Ok(loss_and_gradient(theta, a, batch, p, &spec, false)?.0)
}

/// Reverse-mode gradient of the loss selected by `spec`, ordered as `θ.to_flat(spec.train_lambda)`.
pub fn hyperparameter_gradient(
    theta: &HyperparameterSet,
    a: &ConnectivityMatrix,
    batch: &[TrainingSample],
    p: &SystemParams,
    spec: &LossSpec,
) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(theta, a, batch, p, spec, true)?.1.expect("gradient requested"))
}

/// Central finite differences of the loss over every trainable entry of `θ`.
pub fn fd_gradient_oracle(
    theta: &HyperparameterSet,
    a: &ConnectivityMatrix,
    batch: &[TrainingSample],
    p: &SystemParams,
    spec: &LossSpec,
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {step}")));
    }
    let base = theta.to_flat(spec.train_lambda);
    let mut probe = theta.clone();
    central_differences(
        |flat| {
            probe.set_flat(flat, spec.train_lambda)?;
            Ok(loss_and_gradient(&probe, a, batch, p, spec, false)?.0.total)
        },
        &base,
        step,
    )
}

/// Central differences `(f(x + h e_k) − f(x − h e_k)) / 2h` for every coordinate `k`.
pub fn central_differences(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + step;
        let up = f(&probe)?;
        probe[k] = x[k] - step;
        let down = f(&probe)?;
        probe[k] = x[k];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Update rule for `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaOptimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl ThetaOptimizer {
    pub fn adam() -> Self {
        ThetaOptimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: ThetaOptimizer,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            optimizer: ThetaOptimizer::Sgd,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub theta: HyperparameterSet,
    /// Mean training loss of each completed epoch, measured before each update.
    pub history: Vec<f64>,
    pub updates: usize,
    /// Epoch at which a non-finite loss stopped training; `theta` is the last finite iterate.
    pub diverged_at: Option<usize>,
}

/// Starting point for training: `α = 0.05`, `β = 0.5` on every entry, and `λ = 0.01`
/// when `λ` is trained (zero otherwise).
pub fn default_theta(structure: BlockStructure, iterations: usize, train_lambda: bool) -> HyperparameterSet {
    let lambda = if train_lambda { 0.01 } else { 0.0 };
    HyperparameterSet::constant(structure, iterations, 0.05, 0.5, lambda).expect("non-negative lambda")
}

/// Mini-batch training of `θ`, reshuffling the samples every epoch.
pub fn train(
    theta_init: &HyperparameterSet,
    a: &ConnectivityMatrix,
    samples: &[TrainingSample],
    p: &SystemParams,
    spec: &LossSpec,
    config: &TrainingConfig,
) -> Result<TrainingOutcome> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training needs a non-empty dataset".into()));
    }
    if !(config.eta >= 0.0) || config.batch_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be >= 0 and batch size >= 1, got {} and {}",
            config.eta, config.batch_size
        )));
    }
    let mut theta = theta_init.clone();
    let mut flat = theta.to_flat(spec.train_lambda);
    let mut m1 = vec![0.0; flat.len()];
    let mut m2 = vec![0.0; flat.len()];
    let lambda_start = 2 * theta.structure.support_len() * theta.iterations();
    let mut history = Vec::with_capacity(config.epochs);
    let mut updates = 0usize;
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from(derive_seed(config.seed, stream::SHUFFLE, epoch as u64)));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainingSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let step_spec = LossSpec {
                noise_seed: derive_seed(spec.noise_seed, stream::ROBUST_TRAIN, updates as u64),
                ..*spec
            };
            let (report, grad) = loss_and_gradient(&theta, a, &batch, p, &step_spec, true)?;
            let grad = grad.expect("gradient requested");
            if !report.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Ok(TrainingOutcome {
                    theta,
                    history,
                    updates,
                    diverged_at: Some(epoch),
                });
            }
            epoch_loss += report.total;
            batches += 1;
            updates += 1;
            let mut next = flat.clone();
            match config.optimizer {
                ThetaOptimizer::Sgd => {
                    for (x, g) in next.iter_mut().zip(&grad) {
                        *x -= config.eta * g;
                    }
                }
                ThetaOptimizer::Adam { beta1, beta2, epsilon } => {
                    let t = updates as i32;
                    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                    for k in 0..next.len() {
                        m1[k] = beta1 * m1[k] + (1.0 - beta1) * grad[k];
                        m2[k] = beta2 * m2[k] + (1.0 - beta2) * grad[k] * grad[k];
                        next[k] -= config.eta * (m1[k] / c1) / ((m2[k] / c2).sqrt() + epsilon);
                    }
                }
            }
            if spec.train_lambda {
                for x in &mut next[lambda_start..] {
                    *x = x.max(0.0);
                }
            }
            flat = next;
            theta.set_flat(&flat, spec.train_lambda)?;
        }
        history.push(epoch_loss / batches as f64);
    }
    Ok(TrainingOutcome {
        theta,
        history,
        updates,
        diverged_at: None,
    })
}

/// `θ` carries no dependence on the user count; returned unchanged.
pub fn transfer_users(theta: &HyperparameterSet) -> HyperparameterSet {
    theta.clone()
}

/// How hyperparameters are extended to more panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelTransfer {
    /// `I_c ⊗ α_j`: the learned panel pattern repeated `c` times.
    Kronecker,
    /// Every new panel receives the mean of the learned panel blocks.
    Average,
}

/// Extends `θ` from `P` to `c·P` panels.
pub fn transfer_panels(theta: &HyperparameterSet, c: usize, mode: PanelTransfer) -> Result<HyperparameterSet> {
    if c == 0 {
        return Err(Error::InvalidArgument("panel multiplier must be >= 1".into()));
    }
    let s = theta.structure;
    let block = s.block_rows * s.block_cols;
    let extend = |v: &Vec<f64>| -> Vec<f64> {
        match mode {
            PanelTransfer::Kronecker => v.repeat(c),
            PanelTransfer::Average => {
                let mut mean = vec![0.0; block];
                for panel in v.chunks(block) {
                    for (m, x) in mean.iter_mut().zip(panel) {
                        *m += x;
                    }
                }
                for m in &mut mean {
                    *m /= s.panels as f64;
                }
                mean.repeat(s.panels * c)
            }
        }
    };
    HyperparameterSet::new(
        s.replicated(c),
        theta.alpha.iter().map(extend).collect(),
        theta.beta.iter().map(extend).collect(),
        theta.lambda.iter().map(extend).collect(),
    )
}

/// Where a saved `θ` came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config: serde_json::Value,
    pub dataset_tag: String,
}

#[derive(Serialize, Deserialize)]
struct ThetaFile {
    #[serde(rename = "J")]
    j: usize,
    #[serde(rename = "P")]
    p: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "L")]
    l: usize,
    /// alpha[j][p][n][l]
    alpha: Vec<Vec<Vec<Vec<f64>>>>,
    beta: Vec<Vec<Vec<Vec<f64>>>>,
    lambda: Vec<Vec<Vec<Vec<f64>>>>,
    provenance: Provenance,
}

fn nest(v: &[f64], s: &BlockStructure) -> Vec<Vec<Vec<f64>>> {
    v.chunks(s.block_rows * s.block_cols)
        .map(|panel| panel.chunks(s.block_cols).map(<[f64]>::to_vec).collect())
        .collect()
}

fn flatten(name: &str, j: usize, v: Vec<Vec<Vec<f64>>>, s: &BlockStructure) -> Result<Vec<f64>> {
    if v.len() != s.panels {
        return Err(Error::Schema(format!("{name}[{j}]: expected P={} panels, found {}", s.panels, v.len())));
    }
    let mut out = Vec::with_capacity(s.support_len());
    for (p, panel) in v.into_iter().enumerate() {
        if panel.len() != s.block_rows {
            return Err(Error::Schema(format!(
                "{name}[{j}][{p}]: expected N={} rows, found {}",
                s.block_rows,
                panel.len()
            )));
        }
        for (n, row) in panel.into_iter().enumerate() {
            if row.len() != s.block_cols {
                return Err(Error::Schema(format!(
                    "{name}[{j}][{p}][{n}]: expected L={} entries, found {}",
                    s.block_cols,
                    row.len()
                )));
            }
            out.extend(row);
        }
    }
    Ok(out)
}

pub fn save_theta(theta: &HyperparameterSet, provenance: &Provenance, path: impl AsRef<Path>) -> Result<()> {
    let s = &theta.structure;
    let file = ThetaFile {
        j: theta.iterations(),
        p: s.panels,
        n: s.block_rows,
        l: s.block_cols,
        alpha: theta.alpha.iter().map(|v| nest(v, s)).collect(),
        beta: theta.beta.iter().map(|v| nest(v, s)).collect(),
        lambda: theta.lambda.iter().map(|v| nest(v, s)).collect(),
        provenance: provenance.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_theta(path: impl AsRef<Path>) -> Result<(HyperparameterSet, Provenance)> {
    let file: ThetaFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    let s = BlockStructure::new(file.p, file.n, file.l).map_err(|e| Error::Schema(e.to_string()))?;
    let mut fams = Vec::with_capacity(3);
    for (name, fam) in [("alpha", file.alpha), ("beta", file.beta), ("lambda", file.lambda)] {
        if fam.len() != file.j {
            return Err(Error::Schema(format!("{name}: expected J={} iterations, found {}", file.j, fam.len())));
        }
        let v = fam
            .into_iter()
            .enumerate()
            .map(|(j, it)| flatten(name, j, it, &s))
            .collect::<Result<Vec<_>>>()?;
        fams.push(v);
    }
    let lambda = fams.pop().expect("three families");
    let beta = fams.pop().expect("three families");
    let alpha = fams.pop().expect("three families");
    let theta = HyperparameterSet::new(s, alpha, beta, lambda).map_err(|e| Error::Schema(e.to_string()))?;
    Ok((theta, file.provenance))
}

/// Active-component budget `S_max = fraction · N L P`.
pub fn active_budget(structure: &BlockStructure, fraction: f64) -> f64 {
    fraction * structure.support_len() as f64
}

/// Checks `θ` against an unrolled optimizer that will run with `structure`.
pub fn check_theta_shape(theta: &HyperparameterSet, structure: &BlockStructure) -> Result<()> {
    if theta.structure != *structure {
        return Err(Error::InvalidArgument(format!(
            "hyperparameters are for P={} N={} L={}, scenario needs P={} N={} L={}",
            theta.structure.panels,
            theta.structure.block_rows,
            theta.structure.block_cols,
            structure.panels,
            structure.block_rows,
            structure.block_cols
        )));
    }
    Ok(())
}
