use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{score_epenas_aggregate, score_jacov_aggregate, unit_gradient_vectors};
use super::contextual::score_from_capture;
use super::grasp::{score_grasp, GRASP_EPS};
use super::score::mean_scores;
use super::{CriterionKind, ScoreVector};
use crate::data::FewshotExample;
use crate::error::{Error, Result};
use crate::model::{Capture, ForwardOptions, LossScope, TransformerModel, UnitCapture};

/// A token sequence whose first `prompt_len` tokens are context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub prompt_len: usize,
}

impl Example {
    /// A plain text window: everything but the last token is prompt.
    pub fn window(tokens: Vec<u32>) -> Self {
        let prompt_len = tokens.len().saturating_sub(1);
        Self { tokens, prompt_len }
    }

    /// The token right after the prompt, used as the class label.
    pub fn label(&self) -> u32 {
        let i = self.prompt_len.min(self.tokens.len().saturating_sub(1));
        self.tokens[i]
    }

    pub fn prompt(&self) -> &[u32] {
        &self.tokens[..self.prompt_len.clamp(1, self.tokens.len())]
    }
}

impl From<&FewshotExample> for Example {
    fn from(f: &FewshotExample) -> Self {
        Self {
            tokens: f.sequence(),
            prompt_len: f.prompt.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One score vector per input.
    Contextual,
    /// One score vector for the whole set.
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectOptions {
    /// Score only the target tokens instead of the whole sequence.
    pub target_only: bool,
    pub hvp_eps: f64,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            target_only: false,
            hvp_eps: GRASP_EPS,
        }
    }
}

impl CollectOptions {
    pub fn scope(&self, ex: &Example) -> LossScope {
        if self.target_only {
            LossScope::TargetOnly {
                prompt_len: ex.prompt_len,
            }
        } else {
            LossScope::Full
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Collected {
    PerExample(Vec<ScoreVector>),
    Aggregate(ScoreVector),
}

impl Collected {
    pub fn into_vec(self) -> Vec<ScoreVector> {
        match self {
            Collected::PerExample(v) => v,
            Collected::Aggregate(s) => vec![s],
        }
    }
}

pub fn capture_example(model: &TransformerModel<f64>, ex: &Example, opts: &CollectOptions) -> Result<UnitCapture<f64>> {
    let fwd = ForwardOptions {
        mask: None,
        capture: Capture::ActivationsAndGrads,
        loss_scope: opts.scope(ex),
    };
    model
        .forward(&ex.tokens, &fwd)?
        .capture
        .ok_or(Error::MissingCapture("forward returned no capture"))
}

/// Per-input score of a contextual criterion.
pub fn score_example(
    model: &TransformerModel<f64>,
    ex: &Example,
    kind: CriterionKind,
    opts: &CollectOptions,
) -> Result<ScoreVector> {
    kind.require_contextual()?;
    let cap = capture_example(model, ex, opts)?;
    match kind {
        CriterionKind::Grasp => score_grasp(model, &ex.tokens, opts.scope(ex), &cap, opts.hvp_eps),
        _ => score_from_capture(kind, &cap),
    }
}

/// Scores every example. Examples are processed on the current rayon pool
/// and results are kept in example order.
pub fn collect_criteria(
    model: &TransformerModel<f64>,
    examples: &[Example],
    kind: CriterionKind,
    mode: Mode,
    opts: &CollectOptions,
) -> Result<Collected> {
    if mode == Mode::Contextual {
        kind.require_contextual()?;
    }
    if examples.is_empty() {
        return Err(Error::BatchTooSmall { got: 0, need: 1 });
    }
    let cfg = model.config();
    if kind.is_contextual() {
        let scores = examples
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut s = score_example(model, ex, kind, opts)?;
                s.example_id = Some(i);
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(match mode {
            Mode::Contextual => Collected::PerExample(scores),
            Mode::Aggregate => Collected::Aggregate(mean_scores(&scores)?),
        });
    }
    let grads = examples
        .par_iter()
        .map(|ex| unit_gradient_vectors(&capture_example(model, ex, opts)?))
        .collect::<Result<Vec<_>>>()?;
    let score = match kind {
        CriterionKind::Jacov => score_jacov_aggregate(&grads, cfg)?,
        _ => {
            let labels: Vec<u32> = examples.iter().map(Example::label).collect();
            score_epenas_aggregate(&grads, &labels, cfg)?
        }
    };
    Ok(Collected::Aggregate(score))
}
