use crate::baselines::{grid_tune_fixed, line_search_pga, GridTuning};
use crate::channel::{ChannelRealization, SystemParams};
use crate::constraints::{ProjectionKind, ProjectionSpec};
use crate::error::{Error, Result};
use crate::learning::{check_theta_shape, transfer_panels, transfer_users, PanelTransfer, TrainingSample};
use crate::objective::{sum_rate, ConnectivityMatrix};
use crate::optimizer::{run_unfolded, scalar_hyperparameters, HyperparameterSet, StepMode};
use crate::seeding::{derive_seed, stream};

use super::report::{list, num, CsvTable};
use super::{inference_projection, train_for_scenario, ExperimentConfig, LossKind, PreparedScenario, ScenarioConfig};

/// Per-iteration mean and population standard deviation of the rate over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl RateSummary {
    fn from_runs(rates: &[Vec<f64>]) -> Self {
        let len = rates.first().map_or(0, Vec::len);
        let n = rates.len() as f64;
        let mut mean = vec![0.0; len];
        let mut std = vec![0.0; len];
        for j in 0..len {
            let m = rates.iter().map(|r| r[j]).sum::<f64>() / n;
            let v = rates.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = v.sqrt();
        }
        Self { mean, std }
    }

    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("non-empty summary")
    }

    pub fn final_std(&self) -> f64 {
        *self.std.last().expect("non-empty summary")
    }
}

/// One method run over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRuns {
    /// Rate trajectory of every sample.
    pub rates: Vec<Vec<f64>>,
    /// `‖W_J‖₀ / (N L P)` of every sample.
    pub activity: Vec<f64>,
    /// Whether every final iterate satisfies the projection's constraint set.
    pub feasible: bool,
    /// Samples whose trajectory hit the rank guard.
    pub flagged: usize,
}

impl MethodRuns {
    fn new() -> Self {
        Self {
            rates: Vec::new(),
            activity: Vec::new(),
            feasible: true,
            flagged: 0,
        }
    }

    pub fn summary(&self) -> RateSummary {
        RateSummary::from_runs(&self.rates)
    }

    pub fn mean_activity(&self) -> f64 {
        self.activity.iter().sum::<f64>() / self.activity.len() as f64
    }
}

/// Runs the unrolled optimizer with `theta` on every sample.
pub fn evaluate_runs(
    theta: &HyperparameterSet,
    a: &ConnectivityMatrix,
    samples: &[TrainingSample],
    p: &SystemParams,
    projection: &ProjectionSpec,
) -> Result<MethodRuns> {
    let mut out = MethodRuns::new();
    for s in samples {
        let t = run_unfolded(theta, a, &s.channel, p, projection, StepMode::Hard, &s.init)?;
        let last = t.final_iterate();
        out.feasible &= projection.is_feasible(last.matrix());
        out.activity.push(last.activity_ratio());
        out.flagged += usize::from(t.any_flagged());
        out.rates.push(t.rates);
    }
    Ok(out)
}

/// Optimizes on `observed` channels and scores the final iterate on the clean ones.
fn evaluate_mismatched(
    theta: &HyperparameterSet,
    a: &ConnectivityMatrix,
    samples: &[TrainingSample],
    observed: &[ChannelRealization],
    p: &SystemParams,
    projection: &ProjectionSpec,
) -> Result<MethodRuns> {
    let mut out = MethodRuns::new();
    for (s, h_obs) in samples.iter().zip(observed) {
        let t = run_unfolded(theta, a, h_obs, p, projection, StepMode::Hard, &s.init)?;
        let last = t.final_iterate();
        out.feasible &= projection.is_feasible(last.matrix());
        out.activity.push(last.activity_ratio());
        out.flagged += usize::from(t.any_flagged());
        out.rates.push(vec![sum_rate(last, a, &s.channel, p)?]);
    }
    Ok(out)
}

fn line_search_runs(
    prepared: &PreparedScenario,
    p: &SystemParams,
    iterations: usize,
    cfg: &ExperimentConfig,
    projection: &ProjectionSpec,
) -> Result<MethodRuns> {
    let mut out = MethodRuns::new();
    for s in &prepared.test {
        let run = line_search_pga(
            &prepared.connectivity,
            &s.channel,
            p,
            iterations,
            &cfg.mu_grid,
            &cfg.beta_grid,
            projection,
            &s.init,
        )?;
        let t = run.trajectory;
        let last = t.final_iterate();
        out.feasible &= projection.is_feasible(last.matrix());
        out.activity.push(last.activity_ratio());
        out.flagged += usize::from(t.any_flagged());
        out.rates.push(t.rates);
    }
    Ok(out)
}

/// Fixed-hyperparameter baselines tuned at the long depth.
struct FixedBaselines {
    long_tuning: GridTuning,
    short: MethodRuns,
    long: MethodRuns,
}

fn tune(prepared: &PreparedScenario, p: &SystemParams, iterations: usize, cfg: &ExperimentConfig, projection: &ProjectionSpec) -> Result<GridTuning> {
    grid_tune_fixed(
        &prepared.connectivity,
        prepared.tuning_subset(cfg.tune_samples),
        p,
        iterations,
        &cfg.mu_grid,
        &cfg.beta_grid,
        projection,
    )
}

fn fixed_run(prepared: &PreparedScenario, p: &SystemParams, iterations: usize, t: &GridTuning, projection: &ProjectionSpec) -> Result<MethodRuns> {
    let theta = scalar_hyperparameters(prepared.structure, iterations, t.mu, t.beta);
    evaluate_runs(&theta, &prepared.connectivity, &prepared.test, p, projection)
}

fn fixed_baselines(prepared: &PreparedScenario, p: &SystemParams, cfg: &ExperimentConfig, projection: &ProjectionSpec) -> Result<FixedBaselines> {
    let long_tuning = tune(prepared, p, cfg.long_iterations, cfg, projection)?;
    Ok(FixedBaselines {
        short: fixed_run(prepared, p, prepared.config.iterations, &long_tuning, projection)?,
        long: fixed_run(prepared, p, cfg.long_iterations, &long_tuning, projection)?,
        long_tuning,
    })
}

fn header(table: &mut CsvTable, experiment: &str, sc: &ScenarioConfig, cfg: &ExperimentConfig) {
    table.comment(format!("modbf {}", env!("CARGO_PKG_VERSION")));
    table.comment(format!("experiment: {experiment}"));
    table.comment(format!("scenario: {}", sc.summary()));
    if let Some(w) = &sc.warning {
        table.comment(format!("warning: {w}"));
    }
    table.comment(format!(
        "seed: {} (train/val/test channel and initialisation streams derived from it)",
        sc.seed
    ));
    table.comment(format!(
        "datasets: train={} val={} test={}",
        sc.train_size, sc.val_size, sc.test_size
    ));
    table.comment(format!(
        "iterations: unrolled J={} long reference J={}",
        sc.iterations, cfg.long_iterations
    ));
    table.comment(format!(
        "grids: mu={} beta={} tuned on the first {} training channels",
        list(&cfg.mu_grid),
        list(&cfg.beta_grid),
        cfg.tune_samples
    ));
    table.comment(format!(
        "training: {}",
        serde_json::to_string(&sc.training).expect("training config serializes")
    ));
    table.comment(format!(
        "surrogate: s_m={} zeta_m={} s_p={}",
        num(cfg.surrogate.s_m),
        num(cfg.surrogate.zeta_m),
        num(cfg.surrogate.s_p)
    ));
}

fn tuning_comment(table: &mut CsvTable, label: &str, t: &GridTuning) {
    table.comment(format!(
        "tuned {label}: mu={} beta={} mean training rate={}",
        num(t.mu),
        num(t.beta),
        num(t.mean_rate)
    ));
}

fn unit_modulus(prepared: &PreparedScenario) -> Result<ProjectionSpec> {
    ProjectionSpec::new(ProjectionKind::UnitModulus, prepared.structure)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateIterReport {
    pub table: CsvTable,
    pub unfolded: RateSummary,
    /// Fixed pair tuned at the long depth, run for `J` steps.
    pub fixed_short: RateSummary,
    /// Fixed pair tuned at depth `J`, run for `J` steps.
    pub fixed_short_own: RateSummary,
    pub fixed_long: RateSummary,
    pub line_search: Option<RateSummary>,
}

/// Mean and spread of the rate at every iteration for the learned optimizer and the baselines.
pub fn experiment_rate_vs_iteration(
    prepared: &PreparedScenario,
    theta: &HyperparameterSet,
    cfg: &ExperimentConfig,
) -> Result<RateIterReport> {
    let sc = &prepared.config;
    check_theta_shape(theta, &prepared.structure)?;
    if theta.iterations() != sc.iterations {
        return Err(Error::InvalidArgument(format!(
            "hyperparameters unroll {} iterations, scenario uses J={}",
            theta.iterations(),
            sc.iterations
        )));
    }
    let p = sc.params()?;
    let proj = unit_modulus(prepared)?;
    let j = sc.iterations;

    let unfolded = evaluate_runs(theta, &prepared.connectivity, &prepared.test, &p, &proj)?.summary();
    let fixed = fixed_baselines(prepared, &p, cfg, &proj)?;
    let short_tuning = tune(prepared, &p, j, cfg, &proj)?;
    let fixed_short_own = fixed_run(prepared, &p, j, &short_tuning, &proj)?.summary();
    let line_search = if cfg.line_search {
        Some(line_search_runs(prepared, &p, j, cfg, &proj)?.summary())
    } else {
        None
    };
    let val_unfolded = evaluate_runs(theta, &prepared.connectivity, &prepared.val, &p, &proj)?;
    let val_fixed = evaluate_runs(
        &scalar_hyperparameters(prepared.structure, j, short_tuning.mu, short_tuning.beta),
        &prepared.connectivity,
        &prepared.val,
        &p,
        &proj,
    )?;

    let mut table = CsvTable::new(&["method", "j", "mean_rate", "std_rate"]);
    header(&mut table, "rate-iter", sc, cfg);
    table.comment(format!("snr_db: {}", num(sc.snr_db)));
    tuning_comment(&mut table, &format!("at J={}", cfg.long_iterations), &fixed.long_tuning);
    tuning_comment(&mut table, &format!("at J={j}"), &short_tuning);
    if !val_unfolded.rates.is_empty() {
        table.comment(format!(
            "validation mean rate: u-pga-m={} pga-m-j{j}-tuned={}",
            num(val_unfolded.summary().final_mean()),
            num(val_fixed.summary().final_mean())
        ));
    }
    let fixed_short = fixed.short.summary();
    let fixed_long = fixed.long.summary();
    let mut curves: Vec<(String, &RateSummary)> = vec![
        ("u-pga-m".into(), &unfolded),
        (format!("pga-m-j{j}"), &fixed_short),
        (format!("pga-m-j{j}-tuned"), &fixed_short_own),
        (format!("pga-m-j{}", cfg.long_iterations), &fixed_long),
    ];
    if let Some(ls) = &line_search {
        curves.push((format!("line-search-j{j}"), ls));
    }
    for (name, s) in curves {
        for (k, (m, d)) in s.mean.iter().zip(&s.std).enumerate() {
            table.push(vec![name.clone(), k.to_string(), num(*m), num(*d)]);
        }
    }
    Ok(RateIterReport {
        table,
        unfolded,
        fixed_short,
        fixed_short_own,
        fixed_long,
        line_search,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrReport {
    pub table: CsvTable,
    /// `(method, snr_db, mean final rate)` in table order.
    pub points: Vec<(String, f64, f64)>,
}

/// Final rate of every method across the SNR sweep, training one `θ` per SNR point.
pub fn experiment_rate_vs_snr(prepared: &PreparedScenario, cfg: &ExperimentConfig) -> Result<SnrReport> {
    let base = &prepared.config;
    if base.snr_sweep_db.is_empty() {
        return Err(Error::InvalidArgument("SNR sweep is empty".into()));
    }
    let proj = unit_modulus(prepared)?;
    let j = base.iterations;
    let mut table = CsvTable::new(&["method", "snr_db", "mean_rate", "std_rate"]);
    header(&mut table, "rate-snr", base, cfg);
    table.comment(format!("snr_db: {}", list(&base.snr_sweep_db)));
    let mut points = Vec::new();
    for &snr in &base.snr_sweep_db {
        let mut at = prepared.clone();
        at.config.snr_db = snr;
        let p = at.config.params()?;
        let theta = train_for_scenario(&at, LossKind::Unconstrained, cfg)?.theta;
        let fixed = fixed_baselines(&at, &p, cfg, &proj)?;
        tuning_comment(&mut table, &format!("at J={} snr_db={}", cfg.long_iterations, num(snr)), &fixed.long_tuning);
        let mut rows = vec![
            ("u-pga-m".to_string(), evaluate_runs(&theta, &at.connectivity, &at.test, &p, &proj)?),
            (format!("pga-m-j{j}"), fixed.short),
            (format!("pga-m-j{}", cfg.long_iterations), fixed.long),
        ];
        if cfg.line_search {
            rows.push((format!("line-search-j{j}"), line_search_runs(&at, &p, j, cfg, &proj)?));
        }
        for (name, runs) in rows {
            let s = runs.summary();
            table.push(vec![name.clone(), num(snr), num(s.final_mean()), num(s.final_std())]);
            points.push((name, snr, s.final_mean()));
        }
    }
    Ok(SnrReport { table, points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub table: CsvTable,
    pub power_aware_rate: f64,
    pub power_aware_activity: f64,
    pub unconstrained_rate: f64,
    pub fixed_short_rate: f64,
    pub fixed_long_rate: f64,
    /// Learned `λ` per iteration, averaged over the support.
    pub mean_lambda: Vec<f64>,
}

/// Power-aware learned optimizer against the unconstrained one and the fixed baselines.
pub fn experiment_sparsity(prepared: &PreparedScenario, cfg: &ExperimentConfig) -> Result<SparsityReport> {
    let sc = &prepared.config;
    let p = sc.params()?;
    let j = sc.iterations;
    let kind = LossKind::PowerAware {
        smax_frac: cfg.smax_frac,
    };
    let sparse = inference_projection(kind, prepared.structure, cfg)?;
    let dense = unit_modulus(prepared)?;

    let aware = train_for_scenario(prepared, kind, cfg)?.theta;
    let plain = train_for_scenario(prepared, LossKind::Unconstrained, cfg)?.theta;
    let aware_runs = evaluate_runs(&aware, &prepared.connectivity, &prepared.test, &p, &sparse)?;
    let plain_runs = evaluate_runs(&plain, &prepared.connectivity, &prepared.test, &p, &dense)?;
    let fixed = fixed_baselines(prepared, &p, cfg, &dense)?;

    let mut table = CsvTable::new(&["method", "mean_rate", "std_rate", "mean_activity"]);
    header(&mut table, "sparsity", sc, cfg);
    table.comment(format!("snr_db: {}", num(sc.snr_db)));
    table.comment(format!(
        "budget: S_max={} (fraction {} of {} active components) gamma={} zeta={}",
        num(cfg.smax_frac * prepared.structure.support_len() as f64),
        num(cfg.smax_frac),
        prepared.structure.support_len(),
        num(cfg.gamma),
        num(cfg.zeta)
    ));
    table.comment(format!(
        "power-aware training: {} magnitude sharpness stages={}",
        serde_json::to_string(&cfg.power_aware_training).expect("training config serializes"),
        list(&cfg.magnitude_schedule)
    ));
    tuning_comment(&mut table, &format!("at J={}", cfg.long_iterations), &fixed.long_tuning);
    let rows = [
        ("u-pga-m-power-aware".to_string(), &aware_runs),
        ("u-pga-m".to_string(), &plain_runs),
        (format!("pga-m-j{j}"), &fixed.short),
        (format!("pga-m-j{}", cfg.long_iterations), &fixed.long),
    ];
    for (name, runs) in rows {
        let s = runs.summary();
        table.push(vec![name, num(s.final_mean()), num(s.final_std()), num(runs.mean_activity())]);
    }
    let mean_lambda = aware
        .lambda
        .iter()
        .map(|l| l.iter().sum::<f64>() / l.len() as f64)
        .collect();
    Ok(SparsityReport {
        table,
        power_aware_rate: aware_runs.summary().final_mean(),
        power_aware_activity: aware_runs.mean_activity(),
        unconstrained_rate: plain_runs.summary().final_mean(),
        fixed_short_rate: fixed.short.summary().final_mean(),
        fixed_long_rate: fixed.long.summary().final_mean(),
        mean_lambda,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedReport {
    pub table: CsvTable,
    pub unfolded_rate: f64,
    pub fixed_short_rate: f64,
    pub fixed_long_rate: f64,
    /// Every method's outputs lie on the quantized phase grid.
    pub all_feasible: bool,
}

/// All methods under `levels`-level phase quantization; the learned optimizer trains through
/// the smoothed staircase.
pub fn experiment_quantized(prepared: &PreparedScenario, levels: u32, cfg: &ExperimentConfig) -> Result<QuantizedReport> {
    let sc = &prepared.config;
    let p = sc.params()?;
    let j = sc.iterations;
    let kind = LossKind::Quantized { levels };
    let proj = inference_projection(kind, prepared.structure, cfg)?;
    let theta = train_for_scenario(prepared, kind, cfg)?.theta;
    let unfolded = evaluate_runs(&theta, &prepared.connectivity, &prepared.test, &p, &proj)?;
    let fixed = fixed_baselines(prepared, &p, cfg, &proj)?;

    let mut table = CsvTable::new(&["method", "mean_rate", "std_rate", "feasible"]);
    header(&mut table, "quantized", sc, cfg);
    table.comment(format!("snr_db: {}", num(sc.snr_db)));
    table.comment(format!("phase levels: Q={levels}"));
    tuning_comment(&mut table, &format!("at J={}", cfg.long_iterations), &fixed.long_tuning);
    let rows = [
        ("u-pga-m".to_string(), &unfolded),
        (format!("pga-m-j{j}"), &fixed.short),
        (format!("pga-m-j{}", cfg.long_iterations), &fixed.long),
    ];
    let mut all_feasible = true;
    for (name, runs) in rows {
        let s = runs.summary();
        all_feasible &= runs.feasible;
        table.push(vec![name, num(s.final_mean()), num(s.final_std()), runs.feasible.to_string()]);
    }
    Ok(QuantizedReport {
        table,
        unfolded_rate: unfolded.summary().final_mean(),
        fixed_short_rate: fixed.short.summary().final_mean(),
        fixed_long_rate: fixed.long.summary().final_mean(),
        all_feasible,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiReport {
    pub table: CsvTable,
    pub sigma_e2: Vec<f64>,
    /// Mean clean-channel rate per variance, for each method.
    pub robust: Vec<f64>,
    pub noiseless: Vec<f64>,
    pub fixed_short: Vec<f64>,
    pub fixed_long: Vec<f64>,
}

/// Optimizers fed noisy channel estimates, scored on the true channels.
///
/// The robust model is retrained at every variance; the others are trained or tuned on clean
/// channels once. All variances share one noise stream, so the error at variance `σ²` is the
/// common draw scaled by `σ`.
pub fn experiment_csi_robustness(prepared: &PreparedScenario, cfg: &ExperimentConfig) -> Result<CsiReport> {
    let sc = &prepared.config;
    if cfg.sigma_e2.is_empty() {
        return Err(Error::InvalidArgument("CSI error variance list is empty".into()));
    }
    let p = sc.params()?;
    let j = sc.iterations;
    let proj = unit_modulus(prepared)?;
    let noiseless = train_for_scenario(prepared, LossKind::Unconstrained, cfg)?.theta;
    let long_tuning = tune(prepared, &p, cfg.long_iterations, cfg, &proj)?;
    let short_theta = scalar_hyperparameters(prepared.structure, j, long_tuning.mu, long_tuning.beta);
    let long_theta = scalar_hyperparameters(prepared.structure, cfg.long_iterations, long_tuning.mu, long_tuning.beta);
    let noise_base = derive_seed(sc.seed, stream::CSI_NOISE, 0);

    let mut table = CsvTable::new(&["method", "sigma_e2", "mean_rate", "std_rate"]);
    header(&mut table, "csi", sc, cfg);
    table.comment(format!("snr_db: {}", num(sc.snr_db)));
    table.comment(format!("sigma_e2: {}", list(&cfg.sigma_e2)));
    tuning_comment(&mut table, &format!("at J={}", cfg.long_iterations), &long_tuning);
    let mut report = CsiReport {
        table: CsvTable::default(),
        sigma_e2: cfg.sigma_e2.clone(),
        robust: Vec::new(),
        noiseless: Vec::new(),
        fixed_short: Vec::new(),
        fixed_long: Vec::new(),
    };
    for &sigma in &cfg.sigma_e2 {
        let observed = prepared
            .test
            .iter()
            .enumerate()
            .map(|(i, s)| s.channel.perturbed(sigma, derive_seed(noise_base, stream::CSI_NOISE, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let robust = if sigma == 0.0 {
            noiseless.clone()
        } else {
            train_for_scenario(prepared, LossKind::Robust { sigma_e2: sigma }, cfg)?.theta
        };
        let eval = |theta: &HyperparameterSet| {
            evaluate_mismatched(theta, &prepared.connectivity, &prepared.test, &observed, &p, &proj)
                .map(|r| r.summary())
        };
        let rows = [
            ("u-pga-m-robust".to_string(), eval(&robust)?, &mut report.robust),
            ("u-pga-m-noiseless".to_string(), eval(&noiseless)?, &mut report.noiseless),
            (format!("pga-m-j{j}"), eval(&short_theta)?, &mut report.fixed_short),
            (format!("pga-m-j{}", cfg.long_iterations), eval(&long_theta)?, &mut report.fixed_long),
        ];
        for (name, s, sink) in rows {
            table.push(vec![name, num(sigma), num(s.final_mean()), num(s.final_std())]);
            sink.push(s.final_mean());
        }
    }
    report.table = table;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub table: CsvTable,
    /// `(mode, mean rate)` of every transferred `θ` on the large scenario.
    pub transferred: Vec<(String, f64)>,
    pub fixed_short_rate: f64,
    pub fixed_long_rate: f64,
}

/// Trains on `small` and deploys on `large`.
///
/// With identical panel structures the hyperparameters are reused as they are (user-count
/// transfer). Otherwise `large` must have the same `N` and `L` and an integer multiple of the
/// panels, and both the replicated and the averaged extensions are evaluated.
pub fn experiment_transfer(small: &PreparedScenario, large: &PreparedScenario, cfg: &ExperimentConfig) -> Result<TransferReport> {
    let (s, l) = (small.structure, large.structure);
    let panel_mode = s != l;
    if panel_mode
        && (s.block_rows != l.block_rows || s.block_cols != l.block_cols || l.panels % s.panels != 0)
    {
        return Err(Error::InvalidArgument(format!(
            "cannot transfer from {} to {}: panels must share N and L and the panel count must scale by an integer",
            small.config.name, large.config.name
        )));
    }
    let theta = train_for_scenario(small, LossKind::Unconstrained, cfg)?.theta;
    let candidates: Vec<(String, HyperparameterSet)> = if panel_mode {
        let c = l.panels / s.panels;
        vec![
            ("kronecker".into(), transfer_panels(&theta, c, PanelTransfer::Kronecker)?),
            ("average".into(), transfer_panels(&theta, c, PanelTransfer::Average)?),
        ]
    } else {
        vec![("users".into(), transfer_users(&theta))]
    };
    let j = large.config.iterations;
    if theta.iterations() != j {
        return Err(Error::InvalidArgument(format!(
            "{} unrolls J={} but {} uses J={j}",
            small.config.name,
            theta.iterations(),
            large.config.name
        )));
    }
    let p = large.config.params()?;
    let proj = unit_modulus(large)?;

    let mut table = CsvTable::new(&["method", "mean_rate", "std_rate"]);
    header(&mut table, "transfer", &large.config, cfg);
    table.comment(format!("trained on: {}", small.config.summary()));
    table.comment(format!(
        "source seed: {} datasets: train={}",
        small.config.seed, small.config.train_size
    ));
    table.comment(format!("snr_db: {}", num(large.config.snr_db)));
    let mut transferred = Vec::new();
    for (mode, th) in &candidates {
        let s = evaluate_runs(th, &large.connectivity, &large.test, &p, &proj)?.summary();
        table.push(vec![format!("u-pga-m-{mode}"), num(s.final_mean()), num(s.final_std())]);
        transferred.push((mode.clone(), s.final_mean()));
    }
    let fixed = fixed_baselines(large, &p, cfg, &proj)?;
    tuning_comment(&mut table, &format!("at J={} on {}", cfg.long_iterations, large.config.name), &fixed.long_tuning);
    for (name, runs) in [
        (format!("pga-m-j{j}"), &fixed.short),
        (format!("pga-m-j{}", cfg.long_iterations), &fixed.long),
    ] {
        let s = runs.summary();
        table.push(vec![name, num(s.final_mean()), num(s.final_std())]);
    }
    Ok(TransferReport {
        table,
        transferred,
        fixed_short_rate: fixed.short.summary().final_mean(),
        fixed_long_rate: fixed.long.summary().final_mean(),
    })
}
