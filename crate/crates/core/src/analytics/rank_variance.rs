use serde::{Deserialize, Serialize};

use super::stats::{mean, population_variance};
use crate::criteria::{collect_criteria, CollectOptions, CriterionKind, Example, Mode, ScoreVector};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankVarianceRow {
    pub layer: usize,
    pub head: usize,
    pub mean_rank: f64,
    pub rank_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankVarianceTable {
    /// One row per head, canonical order.
    pub rows: Vec<RankVarianceRow>,
    /// Mean rank variance of each layer's heads.
    pub layer_variance: Vec<f64>,
}

/// Ranks of every head by score, 1 for the highest; equal scores rank the
/// lower index first.
pub fn head_ranks(scores: &ScoreVector, cfg: &ModelConfig) -> Vec<usize> {
    let h = cfg.num_heads_total();
    let v = &scores.values[..h];
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; h];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Per-head mean and population variance of global ranks across inputs.
pub fn rank_variance_from_scores(scores: &[ScoreVector], cfg: &ModelConfig) -> Result<RankVarianceTable> {
    if scores.len() < 2 {
        return Err(Error::BatchTooSmall {
            got: scores.len(),
            need: 2,
        });
    }
    let ranks: Vec<Vec<usize>> = scores.iter().map(|s| head_ranks(s, cfg)).collect();
    let rows: Vec<RankVarianceRow> = (0..cfg.num_heads_total())
        .map(|i| {
            let r: Vec<f64> = ranks.iter().map(|x| x[i] as f64).collect();
            RankVarianceRow {
                layer: i / cfg.heads_per_layer,
                head: i % cfg.heads_per_layer,
                mean_rank: mean(&r),
                rank_variance: population_variance(&r),
            }
        })
        .collect();
    let layer_variance = rows
        .chunks(cfg.heads_per_layer)
        .map(|c| c.iter().map(|r| r.rank_variance).sum::<f64>() / c.len() as f64)
        .collect();
    Ok(RankVarianceTable { rows, layer_variance })
}

/// Scores each prompt with a contextual criterion and tabulates head-rank variance.
pub fn rank_variance(
    model: &TransformerModel<f64>,
    prompts: &[Example],
    criterion: CriterionKind,
    opts: &CollectOptions,
) -> Result<RankVarianceTable> {
    if prompts.len() < 2 {
        return Err(Error::BatchTooSmall {
            got: prompts.len(),
            need: 2,
        });
    }
    let scores = collect_criteria(model, prompts, criterion, Mode::Contextual, opts)?.into_vec();
    rank_variance_from_scores(&scores, model.config())
}
