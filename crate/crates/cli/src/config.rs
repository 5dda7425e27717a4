use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shlm_core::criteria::{CriterionKind, Mode};
use shlm_core::data::{FewshotTemplate, SplitFractions, TokenizerKind};
use shlm_core::model::{ModelConfig, TrainConfig};
use shlm_core::predictor::PredictorConfig;
use shlm_core::pruning::SweepOptions;

use crate::CliError;

/// Everything a run needs besides the subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// Trained weights; required by every command except `train-lm` and `flops`.
    pub checkpoint: Option<PathBuf>,
    /// Text corpus; the built-in synthetic corpus when absent.
    pub corpus: Option<PathBuf>,
    pub synthetic_bytes: usize,
    pub tokenizer: TokenizerKind,
    pub split: SplitFractions,
    pub train: TrainConfig,
    pub criterion: CriterionKind,
    pub mode: Mode,
    pub shots: usize,
    pub shots_list: Vec<usize>,
    pub templates: Vec<FewshotTemplate>,
    /// Examples scored by `collect`, `train-predictor` and `rank-variance`.
    pub examples: usize,
    /// Tokens per plain-text example.
    pub example_len: usize,
    pub target_only: bool,
    pub predictor: PredictorConfig,
    /// Trained predictor used by `eval-predictor` and predictor sweeps.
    pub predictor_checkpoint: Option<PathBuf>,
    pub sweep: SweepOptions,
    /// Validation tokens used for perplexity and the oracle.
    pub eval_tokens: usize,
    pub oracle_windows: usize,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(),
            checkpoint: None,
            corpus: None,
            synthetic_bytes: 400_000,
            tokenizer: TokenizerKind::Byte,
            split: SplitFractions::default(),
            train: TrainConfig::default(),
            criterion: CriterionKind::PlainAct,
            mode: Mode::Aggregate,
            shots: 0,
            shots_list: vec![0, 3, 5],
            templates: FewshotTemplate::ALL.to_vec(),
            examples: 400,
            example_len: 48,
            target_only: false,
            predictor: PredictorConfig::default(),
            predictor_checkpoint: None,
            sweep: SweepOptions::default(),
            eval_tokens: 16_384,
            oracle_windows: 8,
            seeds: vec![0],
        }
    }
}

fn field(name: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {why}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| field("config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| field("config", e))
    }

    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| field("model", e))?;
        self.split.validate().map_err(|e| field("split", e))?;
        self.sweep.validate().map_err(|e| field("sweep", e))?;
        self.predictor.validate(&self.model).map_err(|e| field("predictor", e))?;
        if self.seeds.is_empty() {
            return Err(field("seeds", "must list at least one seed"));
        }
        for (name, path) in [
            ("checkpoint", &self.checkpoint),
            ("corpus", &self.corpus),
            ("predictor_checkpoint", &self.predictor_checkpoint),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(field(name, format!("{} does not exist", p.display())));
                }
            }
        }
        if self.mode == Mode::Contextual && !self.criterion.is_contextual() {
            return Err(field("criterion", format!("{} is aggregate-only", self.criterion)));
        }
        if self.examples == 0 {
            return Err(field("examples", "must be at least 1"));
        }
        if self.example_len < 2 || self.example_len > self.model.max_seq_len {
            return Err(field("example_len", "must lie in [2, max_seq_len]"));
        }
        if self.templates.is_empty() {
            return Err(field("templates", "must not be empty"));
        }
        if self.train.seq_len > self.model.max_seq_len {
            return Err(field("train.seq_len", "exceeds model max_seq_len"));
        }
        if self.corpus.is_none() && self.synthetic_bytes < 1024 {
            return Err(field("synthetic_bytes", "must be at least 1024"));
        }
        Ok(())
    }
}
