//! Scenario registry, data preparation and experiment drivers with CSV reporting.

mod experiments;
mod report;

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::{DEFAULT_BETA_GRID, DEFAULT_MU_GRID};
use crate::channel::{generate_rayleigh, ChannelDataset, SystemParams};
use crate::constraints::{ProjectionKind, ProjectionSpec, SurrogateSpec};
use crate::error::{Error, Result};
use crate::learning::{
    active_budget, default_theta, train, with_initializations, LossSpec, ThetaOptimizer, TrainingConfig,
    TrainingOutcome, TrainingSample,
};
use crate::linalg::BlockStructure;
use crate::objective::ConnectivityMatrix;
use crate::seeding::{derive_seed, stream};

pub use experiments::{
    evaluate_runs, experiment_csi_robustness, experiment_quantized, experiment_rate_vs_iteration,
    experiment_rate_vs_snr, experiment_sparsity, experiment_transfer, CsiReport, MethodRuns, QuantizedReport,
    RateIterReport, RateSummary, SnrReport, SparsityReport, TransferReport,
};
pub use report::CsvTable;

/// How the `L·P` panel outputs are wired to the `T` CPU inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConnectivityPattern {
    Identity,
    /// Output `q` feeds input `q mod T`.
    RoundRobin,
    Explicit { rows: Vec<Vec<u8>> },
    /// A JSON file holding the binary rows.
    File { path: PathBuf },
}

impl ConnectivityPattern {
    pub fn build(&self, outputs: usize, inputs: usize) -> Result<ConnectivityMatrix> {
        let a = match self {
            ConnectivityPattern::Identity => {
                if outputs != inputs {
                    return Err(Error::InvalidArgument(format!(
                        "identity connectivity needs L·P == T, got {outputs} and {inputs}"
                    )));
                }
                ConnectivityMatrix::identity(outputs)
            }
            ConnectivityPattern::RoundRobin => ConnectivityMatrix::round_robin(outputs, inputs)?,
            ConnectivityPattern::Explicit { rows } => ConnectivityMatrix::from_binary(rows)?,
            ConnectivityPattern::File { path } => {
                let rows: Vec<Vec<u8>> = serde_json::from_str(&fs::read_to_string(path)?)?;
                ConnectivityMatrix::from_binary(&rows)?
            }
        };
        if a.outputs() != outputs || a.inputs() != inputs {
            return Err(Error::InvalidArgument(format!(
                "connectivity is {}×{}, scenario needs {outputs}×{inputs}",
                a.outputs(),
                a.inputs()
            )));
        }
        Ok(a)
    }

    pub fn label(&self) -> String {
        match self {
            ConnectivityPattern::Identity => "identity".into(),
            ConnectivityPattern::RoundRobin => "round-robin".into(),
            ConnectivityPattern::Explicit { .. } => "explicit".into(),
            ConnectivityPattern::File { path } => format!("file:{}", path.display()),
        }
    }
}

/// One simulated system together with its data and training defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// `T`
    pub cpu_inputs: usize,
    /// `P`
    pub panels: usize,
    /// `L`
    pub outputs_per_panel: usize,
    /// `N`
    pub antennas_per_panel: usize,
    /// `B`
    pub bins: usize,
    /// `K`
    pub users: usize,
    pub channel_model: String,
    pub connectivity: ConnectivityPattern,
    /// Operating point of single-SNR experiments.
    pub snr_db: f64,
    /// Points of the SNR sweep.
    pub snr_sweep_db: Vec<f64>,
    /// Unrolled depth `J`.
    pub iterations: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
    pub training: TrainingConfig,
    pub warning: Option<String>,
}

pub const SCENARIO_NAMES: [&str; 6] = ["s1", "s2", "s3", "s4", "s5", "s6"];

fn base_scenario(name: &str, dims: [usize; 6], eta: f64) -> ScenarioConfig {
    let [t, p, l, n, b, k] = dims;
    ScenarioConfig {
        name: name.into(),
        cpu_inputs: t,
        panels: p,
        outputs_per_panel: l,
        antennas_per_panel: n,
        bins: b,
        users: k,
        channel_model: "rayleigh".into(),
        connectivity: ConnectivityPattern::RoundRobin,
        snr_db: 0.0,
        snr_sweep_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
        iterations: 10,
        train_size: 1000,
        val_size: 100,
        test_size: 200,
        seed: 0,
        training: TrainingConfig {
            eta,
            epochs: 20,
            batch_size: 20,
            seed: 0,
            optimizer: ThetaOptimizer::Sgd,
        },
        warning: None,
    }
}

/// Registered scenario by name (`s1` … `s6`).
///
/// Dimensions are listed as `[T, P, L, N, B, K]`.
pub fn scenario(name: &str) -> Result<ScenarioConfig> {
    let s = match name {
        "s1" => base_scenario(name, [5, 2, 4, 20, 2, 20], 3.0),
        "s2" => ScenarioConfig {
            warning: Some(
                "measured-channel scenario substituted by i.i.d. Rayleigh channels; rates are not comparable to \
                 published figures"
                    .into(),
            ),
            ..base_scenario(name, [5, 4, 2, 3, 4, 5], 0.3)
        },
        "s3" => base_scenario(name, [5, 8, 1, 4, 2, 50], 0.3),
        "s4" => base_scenario(name, [5, 8, 1, 4, 2, 5], 0.3),
        "s5" => base_scenario(name, [5, 2, 6, 4, 2, 7], 1.0),
        "s6" => base_scenario(name, [40, 16, 6, 4, 2, 7], 1.0),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown scenario '{other}', expected one of {}",
                SCENARIO_NAMES.join(", ")
            )))
        }
    };
    Ok(s)
}

impl ScenarioConfig {
    pub fn structure(&self) -> Result<BlockStructure> {
        BlockStructure::new(self.panels, self.antennas_per_panel, self.outputs_per_panel)
    }

    /// `M = N·P`
    pub fn antennas(&self) -> usize {
        self.antennas_per_panel * self.panels
    }

    pub fn connectivity_matrix(&self) -> Result<ConnectivityMatrix> {
        self.connectivity
            .build(self.outputs_per_panel * self.panels, self.cpu_inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.cpu_inputs, self.bins, self.users, self.iterations].contains(&0) {
            return Err(Error::InvalidArgument(format!("scenario {}: T, B, K and J must be >= 1", self.name)));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "scenario {}: train and test sets must be non-empty",
                self.name
            )));
        }
        if self.channel_model != "rayleigh" {
            return Err(Error::InvalidArgument(format!(
                "scenario {}: unsupported channel model '{}'",
                self.name, self.channel_model
            )));
        }
        if !self.snr_db.is_finite() || self.snr_sweep_db.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("scenario {}: SNR values must be finite", self.name)));
        }
        self.structure()?;
        self.connectivity_matrix()?;
        Ok(())
    }

    pub fn params(&self) -> Result<SystemParams> {
        SystemParams::from_snr_db(self.snr_db)
    }

    pub fn summary(&self) -> String {
        format!(
            "{} (T={} P={} L={} N={} B={} K={} M={}) channel={} connectivity={}",
            self.name,
            self.cpu_inputs,
            self.panels,
            self.outputs_per_panel,
            self.antennas_per_panel,
            self.bins,
            self.users,
            self.antennas(),
            self.channel_model,
            self.connectivity.label()
        )
    }

    /// Train, validation and test channels, each drawn from its own stream.
    pub fn datasets(&self) -> Result<[ChannelDataset; 3]> {
        let make = |split: u64, n: usize| {
            generate_rayleigh(
                self.antennas(),
                self.users,
                self.bins,
                n,
                derive_seed(self.seed, stream::CHANNEL, split),
            )
        };
        Ok([make(0, self.train_size)?, make(1, self.val_size)?, make(2, self.test_size)?])
    }
}

/// Experiment-wide settings; every field has a default so a config file may set any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub snr_db: Option<f64>,
    pub snr_sweep_db: Option<Vec<f64>>,
    pub train_size: Option<usize>,
    pub val_size: Option<usize>,
    pub test_size: Option<usize>,
    pub connectivity: Option<ConnectivityPattern>,
    pub training: Option<TrainingConfig>,
    /// Depth of the long fixed-hyperparameter reference run.
    pub long_iterations: usize,
    /// Number of training channels the fixed-hyperparameter grid search averages over.
    pub tune_samples: usize,
    pub mu_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub surrogate: SurrogateSpec,
    /// Magnitude threshold of the sparse projection.
    pub zeta: f64,
    /// Weight of the active-budget penalty.
    pub gamma: f64,
    /// Magnitude-surrogate sharpness per power-aware training stage; epochs are split evenly
    /// across stages, soft to sharp.
    pub magnitude_schedule: Vec<f64>,
    /// Training settings of the power-aware model, whose `λ` gradients are orders of magnitude
    /// smaller than those of `α` and `β`.
    pub power_aware_training: TrainingConfig,
    pub smax_frac: f64,
    pub q_levels: u32,
    pub sigma_e2: Vec<f64>,
    pub line_search: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            iterations: None,
            snr_db: None,
            snr_sweep_db: None,
            train_size: None,
            val_size: None,
            test_size: None,
            connectivity: None,
            training: None,
            long_iterations: 500,
            tune_samples: 50,
            mu_grid: DEFAULT_MU_GRID.to_vec(),
            beta_grid: DEFAULT_BETA_GRID.to_vec(),
            surrogate: SurrogateSpec::default(),
            zeta: 0.5,
            gamma: 0.3,
            magnitude_schedule: vec![10.0, 20.0, 40.0],
            power_aware_training: TrainingConfig {
                eta: 0.03,
                epochs: 21,
                batch_size: 20,
                seed: 0,
                optimizer: ThetaOptimizer::adam(),
            },
            smax_frac: 0.75,
            q_levels: 16,
            sigma_e2: vec![0.0, 0.05, 0.1, 0.2],
            line_search: true,
        }
    }
}

impl ExperimentConfig {
    /// `base` with this config's overrides applied.
    pub fn resolve(&self, base: &ScenarioConfig) -> Result<ScenarioConfig> {
        let mut s = base.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(j) = self.iterations {
            s.iterations = j;
        }
        if let Some(x) = self.snr_db {
            s.snr_db = x;
        }
        if let Some(v) = &self.snr_sweep_db {
            s.snr_sweep_db = v.clone();
        }
        if let Some(n) = self.train_size {
            s.train_size = n;
        }
        if let Some(n) = self.val_size {
            s.val_size = n;
        }
        if let Some(n) = self.test_size {
            s.test_size = n;
        }
        if let Some(c) = &self.connectivity {
            s.connectivity = c.clone();
        }
        if let Some(t) = &self.training {
            s.training = t.clone();
        }
        s.validate()?;
        self.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tune_samples == 0 {
            return Err(Error::InvalidArgument("tune_samples must be >= 1".into()));
        }
        if self.mu_grid.is_empty() || self.beta_grid.is_empty() {
            return Err(Error::InvalidArgument("grids must be non-empty".into()));
        }
        if !(self.smax_frac > 0.0 && self.smax_frac <= 1.0) {
            return Err(Error::InvalidArgument(format!("smax_frac must lie in (0, 1], got {}", self.smax_frac)));
        }
        if self.q_levels < 2 {
            return Err(Error::InvalidArgument(format!("q_levels must be >= 2, got {}", self.q_levels)));
        }
        if self.sigma_e2.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument("CSI error variances must be >= 0".into()));
        }
        SurrogateSpec::new(self.surrogate.s_m, self.surrogate.zeta_m, self.surrogate.s_p)?;
        for s_m in &self.magnitude_schedule {
            SurrogateSpec::new(*s_m, self.surrogate.zeta_m, self.surrogate.s_p)?;
        }
        if self.power_aware_training.epochs < self.magnitude_schedule.len() {
            return Err(Error::InvalidArgument(format!(
                "power-aware training needs at least one epoch per sharpness stage ({} < {})",
                self.power_aware_training.epochs,
                self.magnitude_schedule.len()
            )));
        }
        Ok(())
    }
}

/// A scenario with its connectivity and samples materialised.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    pub structure: BlockStructure,
    pub connectivity: ConnectivityMatrix,
    pub train: Vec<TrainingSample>,
    pub val: Vec<TrainingSample>,
    pub test: Vec<TrainingSample>,
}

impl PreparedScenario {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let structure = config.structure()?;
        let [train, val, test] = config.datasets()?;
        let init = |d: &ChannelDataset, split: u64| {
            with_initializations(d, structure, derive_seed(config.seed, stream::INIT, split))
        };
        Ok(Self {
            config: config.clone(),
            structure,
            connectivity: config.connectivity_matrix()?,
            train: init(&train, 0),
            val: init(&val, 1),
            test: init(&test, 2),
        })
    }

    /// The first `n` training samples, used for grid tuning.
    pub fn tuning_subset(&self, n: usize) -> &[TrainingSample] {
        &self.train[..n.min(self.train.len())]
    }
}

/// Which training loss a learned optimizer is fitted with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Unconstrained,
    PowerAware { smax_frac: f64 },
    Quantized { levels: u32 },
    Robust { sigma_e2: f64 },
}

impl LossKind {
    pub fn label(&self) -> String {
        match self {
            LossKind::Unconstrained => "unconstrained".into(),
            LossKind::PowerAware { smax_frac } => format!("power-aware(smax_frac={smax_frac})"),
            LossKind::Quantized { levels } => format!("quantized(Q={levels})"),
            LossKind::Robust { sigma_e2 } => format!("robust(sigma_e2={sigma_e2})"),
        }
    }
}

/// Loss for `kind` on `structure`; the CSI noise stream is derived from `seed`.
pub fn loss_spec(kind: LossKind, structure: BlockStructure, cfg: &ExperimentConfig, seed: u64) -> Result<LossSpec> {
    let spec = match kind {
        LossKind::Unconstrained => LossSpec::unconstrained(structure),
        LossKind::PowerAware { smax_frac } => {
            if !(smax_frac > 0.0 && smax_frac <= 1.0) {
                return Err(Error::InvalidArgument(format!("smax_frac must lie in (0, 1], got {smax_frac}")));
            }
            LossSpec::power_aware(structure, cfg.zeta, cfg.gamma, active_budget(&structure, smax_frac))?
        }
        LossKind::Quantized { levels } => LossSpec::quantized(structure, levels)?,
        LossKind::Robust { sigma_e2 } => {
            LossSpec::unconstrained(structure).with_csi_noise(sigma_e2, derive_seed(seed, stream::ROBUST_TRAIN, 0))?
        }
    };
    Ok(spec.with_surrogate(cfg.surrogate))
}

/// Hard projection used at inference for a model trained with `kind`.
pub fn inference_projection(kind: LossKind, structure: BlockStructure, cfg: &ExperimentConfig) -> Result<ProjectionSpec> {
    let k = match kind {
        LossKind::PowerAware { .. } => ProjectionKind::Sparse { zeta: cfg.zeta },
        LossKind::Quantized { levels } => ProjectionKind::Quantized { levels },
        LossKind::Unconstrained | LossKind::Robust { .. } => ProjectionKind::UnitModulus,
    };
    ProjectionSpec::new(k, structure)
}

/// Trains `θ` for `kind` on the scenario's training set at its operating SNR.
///
/// The power-aware model is trained in stages of increasing magnitude sharpness, each stage
/// starting from the previous stage's `θ`. Divergence is reported as an error rather than a
/// partially trained `θ`.
pub fn train_for_scenario(prepared: &PreparedScenario, kind: LossKind, cfg: &ExperimentConfig) -> Result<TrainingOutcome> {
    let sc = &prepared.config;
    let p = sc.params()?;
    let spec = loss_spec(kind, prepared.structure, cfg, sc.seed)?;
    let mut theta = default_theta(prepared.structure, sc.iterations, spec.train_lambda);
    let stages: Vec<(LossSpec, TrainingConfig)> = match kind {
        LossKind::PowerAware { .. } if !cfg.magnitude_schedule.is_empty() => {
            let base = &cfg.power_aware_training;
            let n = cfg.magnitude_schedule.len();
            cfg.magnitude_schedule
                .iter()
                .enumerate()
                .map(|(k, &s_m)| {
                    let stage_spec = spec.with_surrogate(SurrogateSpec { s_m, ..cfg.surrogate });
                    let stage_cfg = TrainingConfig {
                        epochs: base.epochs / n + usize::from(k < base.epochs % n),
                        seed: derive_seed(base.seed, stream::ANNEAL, k as u64),
                        ..base.clone()
                    };
                    (stage_spec, stage_cfg)
                })
                .collect()
        }
        LossKind::PowerAware { .. } => vec![(spec, cfg.power_aware_training.clone())],
        _ => vec![(spec, sc.training.clone())],
    };
    let mut history = Vec::new();
    let mut updates = 0;
    for (stage_spec, stage_cfg) in &stages {
        let outcome = train(&theta, &prepared.connectivity, &prepared.train, &p, stage_spec, stage_cfg)?;
        if let Some(epoch) = outcome.diverged_at {
            return Err(Error::Diverged {
                epoch: history.len() + epoch,
            });
        }
        history.extend(outcome.history);
        updates += outcome.updates;
        theta = outcome.theta;
    }
    Ok(TrainingOutcome {
        theta,
        history,
        updates,
        diverged_at: None,
    })
}
