//! The `dp-tune` command line: `run`, `compare` and `report`.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 configuration error,
//! 3 dataset or unreadable ledger, 4 search failure or missing grid
//! baseline. Flags override config keys, which override defaults.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::datasets::{self, Dataset};
use crate::error::Error;
use crate::fmt::g17;
use crate::ledger::{compare, Ledger};
use crate::objective::{DpsgdObjective, RewardWeights, TrainTemplate};
use crate::optimizers::{run_strategy, Budget, StrategyConfig, StrategySettings};
use crate::search_space::SearchSpace;
use crate::DATA_SEED_OFFSET;

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATASET: i32 = 3;
pub const EXIT_SEARCH: i32 = 4;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DP_TUNE_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("search failed: {0}")]
    Search(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Dataset(_) => EXIT_DATASET,
            CliError::Search(_) => EXIT_SEARCH,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        n_train: usize,
        n_valid: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        n_train: usize,
        n_valid: usize,
    },
    Cifar10 {
        files: Vec<PathBuf>,
        n_train: usize,
        n_valid: usize,
    },
}

impl DatasetSpec {
    pub fn sizes(&self) -> (usize, usize) {
        match self {
            DatasetSpec::Synthetic { n_train, n_valid, .. }
            | DatasetSpec::Mnist { n_train, n_valid, .. }
            | DatasetSpec::Cifar10 { n_train, n_valid, .. } => (*n_train, *n_valid),
        }
    }

    /// Loads the source and draws the stratified train/validation split
    /// with seed `base + DATA_SEED_OFFSET`.
    pub fn load(&self, base_seed: u64) -> Result<(Dataset, Dataset), datasets::DatasetError> {
        let seed = base_seed.wrapping_add(DATA_SEED_OFFSET);
        let (n_train, n_valid) = self.sizes();
        let full = match self {
            DatasetSpec::Synthetic {
                dim,
                classes,
                separation,
                ..
            } => datasets::synthetic(n_train + n_valid, *dim, *classes, *separation, seed)?,
            DatasetSpec::Mnist { images, labels, .. } => datasets::load_mnist_idx(images, labels)?,
            DatasetSpec::Cifar10 { files, .. } => datasets::load_cifar10_bin(files)?,
        };
        datasets::subset(&full, n_train, n_valid, seed)
    }
}

fn default_strategy() -> String {
    "grid".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub search_space: SearchSpace,
    #[serde(default)]
    pub train: TrainTemplate,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default)]
    pub strategies: StrategySettings,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn config_err(key: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {e}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                CliError::Config(inner.to_string())
            } else {
                config_err(&path, inner)
            }
        })?;
        cfg.search_space.sigma.name = "sigma".into();
        cfg.search_space.eta.name = "eta".into();
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn strategy_config(&self) -> Result<StrategyConfig, CliError> {
        StrategyConfig::from_name(&self.strategy, &self.strategies).map_err(|e| config_err("strategy", e))
    }

    /// Checks every nested invariant; the message names the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        self.search_space.sigma.validate().map_err(|e| config_err("search_space.sigma", e))?;
        self.search_space.eta.validate().map_err(|e| config_err("search_space.eta", e))?;

        let t = &self.train;
        if t.epochs == 0 {
            return Err(config_err("train.epochs", "must be >= 1"));
        }
        if t.batch_size == 0 {
            return Err(config_err("train.batch_size", "must be >= 1"));
        }
        if !(t.clip_norm > 0.0) {
            return Err(config_err("train.clip_norm", "must be > 0"));
        }
        if !(t.delta > 0.0 && t.delta < 1.0) {
            return Err(config_err("train.delta", "must be in (0, 1)"));
        }
        if t.hidden.is_empty() || t.hidden.contains(&0) {
            return Err(config_err("train.hidden", "needs at least one layer, all widths >= 1"));
        }
        self.reward.validate().map_err(|e| config_err("reward", e))?;

        let strategy = self.strategy_config()?;
        strategy
            .validate()
            .map_err(|e| config_err(&format!("strategies.{}", self.strategy), e))?;
        self.budget.validate().map_err(|e| config_err("budget", e))?;

        let (n_train, n_valid) = self.dataset.sizes();
        if n_train == 0 {
            return Err(config_err("dataset.n_train", "must be >= 1"));
        }
        if n_valid == 0 {
            return Err(config_err("dataset.n_valid", "must be >= 1"));
        }
        if t.batch_size > n_train {
            return Err(config_err("train.batch_size", format!("{} exceeds dataset.n_train {n_train}", t.batch_size)));
        }
        match &self.dataset {
            DatasetSpec::Synthetic {
                dim,
                classes,
                separation,
                ..
            } => {
                if *classes < 2 {
                    return Err(config_err("dataset.classes", "must be >= 2"));
                }
                if dim < classes {
                    return Err(config_err("dataset.dim", "must be >= dataset.classes"));
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    return Err(config_err("dataset.separation", "must be finite and >= 0"));
                }
            }
            DatasetSpec::Cifar10 { files, .. } if files.is_empty() => {
                return Err(config_err("dataset.files", "needs at least one batch file"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        format!("{}-seed{}", self.strategy, self.seed)
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub strategy: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = &self.strategy {
            cfg.strategy = s.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
    }
}

/// `--out` / config `output_dir`, then `DP_TUNE_OUT`, then `runs`.
pub fn output_root(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Validates, trains and searches; the returned ledger is not yet exported.
pub fn execute(cfg: &RunConfig, jobs: usize) -> Result<Ledger, CliError> {
    cfg.validate()?;
    let strategy = cfg.strategy_config()?;
    let (train, valid) = cfg.dataset.load(cfg.seed).map_err(|e| CliError::Dataset(e.to_string()))?;
    let sample_ids = train.sample_ids.clone();
    let objective = DpsgdObjective::new(train, valid, cfg.train.clone(), cfg.reward, cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let evaluator = |hp: &crate::search_space::HyperParams, i: usize| objective.evaluate_trial(hp, i);
    let result = run_strategy(&strategy, &cfg.search_space, &cfg.budget, &evaluator, cfg.seed, jobs.max(1))
        .map_err(|e| CliError::Search(e.to_string()))?;
    let snapshot = serde_json::to_value(cfg).expect("config serializes");
    Ledger::from_result(cfg.run_id(), cfg.seed, snapshot, result, sample_ids).map_err(|e| CliError::Search(e.to_string()))
}

pub fn cmd_run(config: &Path, overrides: &Overrides, jobs: usize) -> Result<PathBuf, CliError> {
    let mut cfg = RunConfig::from_path(config)?;
    overrides.apply(&mut cfg);
    let ledger = execute(&cfg, jobs)?;
    let dir = output_root(&cfg).join(&ledger.run_id);
    ledger.export(&dir).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(dir)
}

pub fn cmd_compare(dirs: &[PathBuf], out: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let ledgers = dirs
        .iter()
        .map(|d| Ledger::load(d).map_err(|e| CliError::Dataset(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let report = compare(&ledgers).map_err(|e| match e {
        Error::BaselineUnavailable => CliError::Search(e.to_string()),
        other => CliError::Search(other.to_string()),
    })?;
    report.write(out).map_err(|e| CliError::Io(e.to_string()))
}

/// Plain-text summary of one exported run.
pub fn report_text(ledger: &Ledger, baseline: Option<f64>) -> String {
    let failed = ledger.records.iter().filter(|r| !r.is_ok()).count();
    let mut s = format!(
        "run: {}\nstrategy: {}\nseed: {}\ntrials: {} ({} failed)\n",
        ledger.run_id,
        ledger.strategy,
        ledger.seed,
        ledger.records.len(),
        failed
    );
    match ledger.best() {
        Some(b) => {
            s.push_str(&format!("best trial: {}\n", b.trial_index));
            s.push_str(&format!("best reward: {}\n", g17(b.reward)));
            s.push_str(&format!("sigma: {}\n", g17(b.hyperparams.sigma)));
            s.push_str(&format!("eta: {}\n", g17(b.hyperparams.eta)));
            s.push_str(&format!("epsilon: {}\n", g17(b.epsilon)));
            s.push_str(&format!("val_accuracy: {}\n", g17(b.val_accuracy)));
            s.push_str(&format!("val_loss: {}\n", g17(b.val_loss)));
        }
        None => s.push_str("best trial: none (no successful trials)\n"),
    }
    if let Some(target) = baseline {
        s.push_str(&format!("baseline: {}\n", g17(target)));
        match ledger.budget_to_baseline(target) {
            Some(c) => s.push_str(&format!(
                "trials to baseline: {}\nsample visits to baseline: {}\nwall seconds to baseline: {}\n",
                c.trials,
                c.sample_visits,
                g17(c.wall_seconds)
            )),
            None => s.push_str("baseline unreached\n"),
        }
    }
    s
}

pub fn cmd_report(dir: &Path, baseline: Option<f64>) -> Result<String, CliError> {
    let ledger = Ledger::load(dir).map_err(|e| CliError::Dataset(e.to_string()))?;
    Ok(report_text(&ledger, baseline))
}

#[derive(Debug, Parser)]
#[command(name = "dp-tune", version, about = "Hyperparameter search for DPSGD training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one search strategy and export its ledger.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel trial evaluations.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output root; the run is written to `<out>/<strategy>-seed<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare exported runs against the grid baseline.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Directory receiving comparison.csv and comparison.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize one exported run.
    Report {
        dir: PathBuf,
        #[arg(long)]
        baseline: Option<f64>,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Run {
            config,
            strategy,
            seed,
            jobs,
            out,
        } => cmd_run(&config, &Overrides { strategy, seed, out }, jobs).map(|dir| println!("{}", dir.display())),
        Command::Compare { dirs, out } => cmd_compare(&dirs, &out).map(|(csv, json)| {
            println!("{}", csv.display());
            println!("{}", json.display());
        }),
        Command::Report { dir, baseline } => cmd_report(&dir, baseline).map(|text| print!("{text}")),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dp-tune: {e}");
            e.exit_code()
        }
    }
}
