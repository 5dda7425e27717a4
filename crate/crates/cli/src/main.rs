//! `shlm`: train toy language models, score pruning criteria, fit sparsity
//! predictors and evaluate pruned models from one JSON experiment config.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "shlm", version, about = "Contextual sparsity experiments on small transformers")]
struct Cli {
    /// JSON experiment config; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train a language model on the corpus.
    TrainLm {
        /// Model preset: toy, small or tiny.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Dense (or masked) perplexity on the validation split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Mask JSON listing surviving units.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Score every unit with a criterion.
    Collect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        criterion: Option<String>,
        /// One score vector per example instead of the mean.
        #[arg(long)]
        contextual: bool,
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Build a criteria dataset and fit a predictor.
    TrainPredictor {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        criterion: Option<String>,
        #[arg(long)]
        topology: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Held-out fidelity of a trained predictor.
    EvalPredictor {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictor: Option<PathBuf>,
    },
    /// Perplexity against sparsity for static scores or a predictor.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        criterion: Option<String>,
        /// Use this predictor instead of static criterion scores.
        #[arg(long)]
        predictor: Option<PathBuf>,
        /// Comma-separated sparsity grid.
        #[arg(long, value_delimiter = ',')]
        sparsity: Option<Vec<f64>>,
        /// Comma-separated strategies: local, global.
        #[arg(long, value_delimiter = ',')]
        strategy: Option<Vec<String>>,
    },
    /// Variance of global head ranks across inputs.
    RankVariance {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to gradnorm.
        #[arg(long)]
        criterion: Option<String>,
    },
    /// Static-pruning sweeps with criteria gathered at several shot counts.
    Fewshot {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        criterion: Option<String>,
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<usize>>,
    },
    /// Predictor cost model.
    Flops {
        /// One of opt-1.3b, opt-13b, opt-30b, opt-66b, opt-175b.
        #[arg(long)]
        model_preset: Option<String>,
        /// Predictor hidden width; 2048 for OPT presets, 4·E otherwise.
        #[arg(long)]
        p1: Option<usize>,
    },
    /// Exact loss change from removing each unit alone.
    Oracle {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// heads, neurons or both.
        #[arg(long)]
        scope: Option<String>,
    },
    /// Re-run the command recorded in a manifest.
    Reproduce {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad config or arguments: exit code 2.
    Config(String),
    /// Failure while running: exit code 1.
    Runtime(shlm_core::Error),
}

impl From<shlm_core::Error> for CliError {
    fn from(e: shlm_core::Error) -> Self {
        use shlm_core::Error as E;
        match e {
            E::InvalidConfig(m) => CliError::Config(m),
            E::ContextualUnsupported(_) => CliError::Config(format!("criterion: {e}")),
            E::UnknownTemplate(_) => CliError::Config(format!("templates: {e}")),
            E::ConfigMismatch(_) => CliError::Config(format!("checkpoint: {e}")),
            E::BudgetExceedsUnits(_) => CliError::Config(format!("sweep.grid: {e}")),
            other => CliError::Runtime(other),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.workers == 0 {
        return Err(CliError::Config("workers: must be at least 1".into()));
    }
    let (command, config) = match cli.command {
        Command::Reproduce { manifest } => {
            let m = manifest::Manifest::read(&manifest)?;
            (m.command, m.config)
        }
        command => {
            let mut config = match &cli.config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = cli.seed {
                config.seeds = vec![s];
            }
            (command, config)
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    pool.install(|| commands::execute(command, config, &cli.out, cli.workers))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SHLM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
