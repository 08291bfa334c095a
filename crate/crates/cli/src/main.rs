use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use modbf::channel::save_dataset;
use modbf::harness::{
    evaluate_runs, experiment_csi_robustness, experiment_quantized, experiment_rate_vs_iteration,
    experiment_rate_vs_snr, experiment_sparsity, experiment_transfer, inference_projection, scenario,
    train_for_scenario, CsvTable, ExperimentConfig, LossKind, PreparedScenario, ScenarioConfig,
};
use modbf::learning::{load_theta, save_theta, Provenance};
use modbf::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "modbf", version, about = "Learned hybrid beamforming for modular MIMO receivers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the scenario's train, validation and test channels as JSON.
    GenData(CommonArgs),
    /// Train unrolled-optimizer hyperparameters and save them to --theta.
    Train(CommonArgs),
    /// Evaluate saved hyperparameters on the scenario's test channels.
    Eval(CommonArgs),
    /// Run one of the comparison experiments and write its CSV.
    Experiment {
        kind: ExperimentKind,
        #[command(flatten)]
        args: CommonArgs,
        /// Scenario to train on for `transfer` (default: s4 for s3, s5 for s6).
        #[arg(long)]
        source: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    RateIter,
    RateSnr,
    Sparsity,
    Quantized,
    Csi,
    Transfer,
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[arg(long, default_value = "s1")]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Unrolled depth J.
    #[arg(long)]
    iters: Option<usize>,
    /// One value sets the operating point; several set the `rate-snr` sweep.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr_db: Vec<f64>,
    /// Phase levels; with `train`/`eval` selects the quantized model.
    #[arg(long)]
    q_levels: Option<u32>,
    /// Active-component budget as a fraction of N·L·P; with `train`/`eval` selects the power-aware model.
    #[arg(long)]
    smax_frac: Option<f64>,
    /// CSI error variance(s); with `train` selects robust training.
    #[arg(long, value_delimiter = ',')]
    sigma_e2: Vec<f64>,
    /// Output path (CSV for experiments and eval, channel JSON for gen-data); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hyperparameter JSON (written by train, read by eval and rate-iter).
    #[arg(long)]
    theta: Option<PathBuf>,
    /// Experiment config JSON; any subset of fields may be given.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_CONFIG },
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

impl CommonArgs {
    fn experiment_config(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.iters.is_some() {
            cfg.iterations = self.iters;
        }
        match self.snr_db.as_slice() {
            [] => {}
            [x] => cfg.snr_db = Some(*x),
            many => cfg.snr_sweep_db = Some(many.to_vec()),
        }
        if let Some(q) = self.q_levels {
            cfg.q_levels = q;
        }
        if let Some(f) = self.smax_frac {
            cfg.smax_frac = f;
        }
        if !self.sigma_e2.is_empty() {
            cfg.sigma_e2 = self.sigma_e2.clone();
        }
        Ok(cfg)
    }

    fn resolve(&self, name: &str, cfg: &ExperimentConfig) -> Result<ScenarioConfig, Failure> {
        let s = cfg.resolve(&scenario(name)?)?;
        if let Some(w) = &s.warning {
            eprintln!("warning: {}: {w}", s.name);
        }
        Ok(s)
    }

    /// Model kind selected by the constraint flags.
    fn loss_kind(&self) -> Result<LossKind, Failure> {
        let chosen = [self.q_levels.is_some(), self.smax_frac.is_some(), !self.sigma_e2.is_empty()];
        if chosen.iter().filter(|c| **c).count() > 1 {
            return Err(config_error("--q-levels, --smax-frac and --sigma-e2 are mutually exclusive here"));
        }
        Ok(match (self.q_levels, self.smax_frac, self.sigma_e2.as_slice()) {
            (Some(levels), _, _) => LossKind::Quantized { levels },
            (_, Some(smax_frac), _) => LossKind::PowerAware { smax_frac },
            (_, _, [sigma_e2]) => LossKind::Robust { sigma_e2: *sigma_e2 },
            (_, _, []) => LossKind::Unconstrained,
            _ => return Err(config_error("training takes a single --sigma-e2 value")),
        })
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| config_error(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_data(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = args.experiment_config()?;
    let sc = args.resolve(&args.scenario, &cfg)?;
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| config_error("gen-data needs --out <file>.json"))?;
    let stem = out.with_extension("");
    for (split, d) in ["train", "val", "test"].iter().zip(sc.datasets()?) {
        let path = PathBuf::from(format!("{}.{split}.json", stem.display()));
        save_dataset(&d, &path)?;
        eprintln!("{}: {} channels -> {}", split, d.len(), path.display());
    }
    Ok(())
}

fn train_cmd(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = args.experiment_config()?;
    let kind = args.loss_kind()?;
    let sc = args.resolve(&args.scenario, &cfg)?;
    let theta_path = args
        .theta
        .as_ref()
        .ok_or_else(|| config_error("train needs --theta <file>.json for the trained hyperparameters"))?;
    let prepared = PreparedScenario::new(&sc)?;
    let outcome = train_for_scenario(&prepared, kind, &cfg)?;
    let provenance = Provenance {
        seed: sc.seed,
        config: serde_json::json!({
            "scenario": sc,
            "experiment": cfg,
            "loss": kind.label(),
        }),
        dataset_tag: format!("{}/rayleigh/seed={}/train={}", sc.name, sc.seed, sc.train_size),
    };
    save_theta(&outcome.theta, &provenance, theta_path)?;

    let mut table = CsvTable::new(&["epoch", "mean_loss"]);
    table.comment(format!("modbf {} train", env!("CARGO_PKG_VERSION")));
    table.comment(format!("scenario: {}", sc.summary()));
    table.comment(format!("loss: {}", kind.label()));
    table.comment(format!("training: {}", serde_json::to_string(&sc.training).unwrap_or_default()));
    for (e, l) in outcome.history.iter().enumerate() {
        table.push(vec![e.to_string(), format!("{l}")]);
    }
    eprintln!(
        "trained {} updates; final epoch loss {}",
        outcome.updates,
        outcome.history.last().copied().unwrap_or(f64::NAN)
    );
    emit(&table.render(), args.out.as_deref())
}

fn load_for(args: &CommonArgs, what: &str) -> Result<modbf::optimizer::HyperparameterSet, Failure> {
    let path = args.theta.as_ref().ok_or_else(|| {
        config_error(format!(
            "{what} needs trained hyperparameters: run `modbf train --scenario {} --theta theta.json` first and pass --theta theta.json",
            args.scenario
        ))
    })?;
    if !path.exists() {
        return Err(config_error(format!(
            "{} not found: run `modbf train --scenario {} --theta {}` first",
            path.display(),
            args.scenario,
            path.display()
        )));
    }
    Ok(load_theta(path)?.0)
}

fn eval_cmd(args: &CommonArgs) -> Result<(), Failure> {
    let mut cfg = args.experiment_config()?;
    let theta = load_for(args, "eval")?;
    cfg.iterations.get_or_insert(theta.iterations());
    let kind = args.loss_kind()?;
    let sc = args.resolve(&args.scenario, &cfg)?;
    let prepared = PreparedScenario::new(&sc)?;
    modbf::learning::check_theta_shape(&theta, &prepared.structure)?;
    let proj = inference_projection(kind, prepared.structure, &cfg)?;
    let runs = evaluate_runs(&theta, &prepared.connectivity, &prepared.test, &sc.params()?, &proj)?;
    let s = runs.summary();
    let mut table = CsvTable::new(&["method", "j", "mean_rate", "std_rate"]);
    table.comment(format!("modbf {} eval", env!("CARGO_PKG_VERSION")));
    table.comment(format!("scenario: {}", sc.summary()));
    table.comment(format!("snr_db: {} seed: {} test={}", sc.snr_db, sc.seed, sc.test_size));
    table.comment(format!("projection: {:?}", proj.kind));
    table.comment(format!("mean activity: {} flagged samples: {}", runs.mean_activity(), runs.flagged));
    for (j, (m, d)) in s.mean.iter().zip(&s.std).enumerate() {
        table.push(vec!["u-pga-m".into(), j.to_string(), format!("{m}"), format!("{d}")]);
    }
    eprintln!("mean final rate {}", s.final_mean());
    emit(&table.render(), args.out.as_deref())
}

fn experiment_cmd(kind: ExperimentKind, args: &CommonArgs, source: Option<&str>) -> Result<(), Failure> {
    let cfg = args.experiment_config()?;
    let table = match kind {
        ExperimentKind::RateIter => {
            let theta = load_for(args, "rate-iter")?;
            let prepared = PreparedScenario::new(&args.resolve(&args.scenario, &cfg)?)?;
            experiment_rate_vs_iteration(&prepared, &theta, &cfg)?.table
        }
        ExperimentKind::RateSnr => {
            let prepared = PreparedScenario::new(&args.resolve(&args.scenario, &cfg)?)?;
            experiment_rate_vs_snr(&prepared, &cfg)?.table
        }
        ExperimentKind::Sparsity => {
            let prepared = PreparedScenario::new(&args.resolve(&args.scenario, &cfg)?)?;
            experiment_sparsity(&prepared, &cfg)?.table
        }
        ExperimentKind::Quantized => {
            let prepared = PreparedScenario::new(&args.resolve(&args.scenario, &cfg)?)?;
            experiment_quantized(&prepared, cfg.q_levels, &cfg)?.table
        }
        ExperimentKind::Csi => {
            let prepared = PreparedScenario::new(&args.resolve(&args.scenario, &cfg)?)?;
            experiment_csi_robustness(&prepared, &cfg)?.table
        }
        ExperimentKind::Transfer => {
            let source = match (source, args.scenario.as_str()) {
                (Some(s), _) => s,
                (None, "s3") => "s4",
                (None, "s6") => "s5",
                (None, other) => {
                    return Err(config_error(format!(
                        "no default source scenario for '{other}'; pass --source"
                    )))
                }
            };
            let small = PreparedScenario::new(&args.resolve(source, &cfg)?)?;
            let large = PreparedScenario::new(&args.resolve(&args.scenario, &cfg)?)?;
            experiment_transfer(&small, &large, &cfg)?.table
        }
    };
    emit(&table.render(), args.out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Experiment { kind, args, source } => experiment_cmd(*kind, args, source.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
