use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extract_features, Feature, Normalization, PredictorConfig};
use crate::criteria::{group_range, score_example, CollectOptions, CriterionKind, Example};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerModel, UnitKind};

/// Affine map of one (layer, kind) group: `normalized = (raw − offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParam {
    pub offset: f64,
    pub scale: f64,
}

impl NormParam {
    pub const IDENTITY: NormParam = NormParam { offset: 0.0, scale: 1.0 };

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.offset
    }
}

/// Group order used for normalization parameters: per layer, heads then neurons.
pub fn norm_groups(cfg: &ModelConfig) -> impl Iterator<Item = (usize, UnitKind)> + '_ {
    (0..cfg.num_layers).flat_map(|l| [(l, UnitKind::Head), (l, UnitKind::Neuron)])
}

/// Normalizes one example's scores group by group. The `-inf` sentinel is
/// first replaced by the group's smallest finite value (0 if none).
pub fn normalize_scores(values: &[f64], cfg: &ModelConfig, scheme: Normalization) -> (Vec<f64>, Vec<NormParam>) {
    let mut out = values.to_vec();
    let mut params = Vec::with_capacity(2 * cfg.num_layers);
    for (layer, kind) in norm_groups(cfg) {
        let group = &mut out[group_range(cfg, layer, kind)];
        let floor = group.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
        let floor = if floor.is_finite() { floor } else { 0.0 };
        group.iter_mut().filter(|v| !v.is_finite()).for_each(|v| *v = floor);
        let p = match scheme {
            Normalization::None => NormParam::IDENTITY,
            Normalization::MinMax => {
                let lo = group.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = group.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    NormParam { offset: lo, scale: hi - lo }
                } else {
                    NormParam { offset: lo - 0.5, scale: 1.0 }
                }
            }
            Normalization::ZScore => {
                let n = group.len() as f64;
                let mean = group.iter().sum::<f64>() / n;
                let std = (group.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                NormParam {
                    offset: mean,
                    scale: if std > 0.0 { std } else { 1.0 },
                }
            }
        };
        group.iter_mut().for_each(|v| *v = p.apply(*v));
        params.push(p);
    }
    (out, params)
}

/// Inverse of [`normalize_scores`].
pub fn denormalize_scores(values: &[f64], params: &[NormParam], cfg: &ModelConfig) -> Vec<f64> {
    let mut out = values.to_vec();
    for ((layer, kind), p) in norm_groups(cfg).zip(params) {
        out[group_range(cfg, layer, kind)].iter_mut().for_each(|v| *v = p.invert(*v));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetExample {
    pub feature: Feature,
    /// Normalized scores in canonical unit order (all layers).
    pub target: Vec<f64>,
    pub norm: Vec<NormParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaDataset {
    pub criterion: CriterionKind,
    pub shots: usize,
    pub config: PredictorConfig,
    pub model: ModelConfig,
    pub examples: Vec<DatasetExample>,
    /// Examples `[0, train_len)` train; the rest are held out.
    pub train_len: usize,
}

impl CriteriaDataset {
    pub fn train(&self) -> &[DatasetExample] {
        &self.examples[..self.train_len]
    }

    pub fn heldout(&self) -> &[DatasetExample] {
        &self.examples[self.train_len..]
    }

    /// Population variance of every covered held-out target entry.
    pub fn heldout_target_variance(&self) -> f64 {
        let covered = self.config.covered_layers(&self.model);
        let vals: Vec<f64> = self
            .heldout()
            .iter()
            .flat_map(|ex| covered_entries(&ex.target, &covered, &self.model))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

pub(crate) fn covered_entries<'a>(
    values: &'a [f64],
    covered: &'a [bool],
    cfg: &'a ModelConfig,
) -> impl Iterator<Item = f64> + 'a {
    norm_groups(cfg)
        .filter(|(l, _)| covered[*l])
        .flat_map(move |(l, k)| values[group_range(cfg, l, k)].iter().copied())
}

/// First 90% of examples by index.
pub fn train_split(n: usize) -> usize {
    n * 9 / 10
}

/// Scores every example with a contextual criterion on the full sequence and
/// pairs the normalized scores with features read from the prompt alone.
pub fn build_dataset(
    model: &TransformerModel<f64>,
    examples: &[Example],
    criterion: CriterionKind,
    shots: usize,
    config: &PredictorConfig,
    opts: &CollectOptions,
) -> Result<CriteriaDataset> {
    criterion.require_contextual()?;
    let cfg = model.config();
    config.validate(cfg)?;
    if examples.is_empty() {
        return Err(Error::DatasetTooSmall("no examples".into()));
    }
    let rows = examples
        .par_iter()
        .map(|ex| {
            let scores = score_example(model, ex, criterion, opts)?;
            let (target, norm) = normalize_scores(&scores.values, cfg, config.normalization);
            Ok(DatasetExample {
                feature: extract_features(model, ex.prompt(), config)?,
                target,
                norm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CriteriaDataset {
        criterion,
        shots,
        config: config.clone(),
        model: cfg.clone(),
        train_len: train_split(rows.len()),
        examples: rows,
    })
}
