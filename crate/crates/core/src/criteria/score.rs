use serde::{Deserialize, Serialize};

use super::CriterionKind;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, UnitId, UnitKind};

/// One score per prunable unit in canonical order.
///
/// `covered[l]` is false for layers the producer does not score (a shadow
/// predictor never scores layer 0); those entries are zero and the layer is
/// left dense by mask construction. `f64::NEG_INFINITY` is the only allowed
/// non-finite value and ranks below everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub criterion: CriterionKind,
    pub example_id: Option<usize>,
    pub values: Vec<f64>,
    pub covered: Vec<bool>,
}

impl ScoreVector {
    pub fn new(criterion: CriterionKind, example_id: Option<usize>, values: Vec<f64>, cfg: &ModelConfig) -> Self {
        Self {
            criterion,
            example_id,
            values,
            covered: vec![true; cfg.num_layers],
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.values.len() != cfg.num_units() {
            return Err(Error::LengthMismatch(self.values.len(), cfg.num_units()));
        }
        if self.covered.len() != cfg.num_layers {
            return Err(Error::LengthMismatch(self.covered.len(), cfg.num_layers));
        }
        if self.values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite("score vector"));
        }
        Ok(())
    }

    pub fn get(&self, cfg: &ModelConfig, unit: UnitId) -> f64 {
        self.values[unit.linear(cfg)]
    }

    /// Scores of one (layer, kind) group.
    pub fn group(&self, cfg: &ModelConfig, layer: usize, kind: UnitKind) -> &[f64] {
        let r = group_range(cfg, layer, kind);
        &self.values[r]
    }

    pub fn group_mut(&mut self, cfg: &ModelConfig, layer: usize, kind: UnitKind) -> &mut [f64] {
        let r = group_range(cfg, layer, kind);
        &mut self.values[r]
    }

    /// Values of every covered unit, in canonical order.
    pub fn covered_values(&self, cfg: &ModelConfig) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .filter(|&(i, _)| self.covered[UnitId::from_linear(cfg, i).layer])
            .map(|(_, &v)| v)
            .collect()
    }
}

pub(crate) fn group_range(cfg: &ModelConfig, layer: usize, kind: UnitKind) -> std::ops::Range<usize> {
    match kind {
        UnitKind::Head => {
            let s = layer * cfg.heads_per_layer;
            s..s + cfg.heads_per_layer
        }
        UnitKind::Neuron => {
            let s = cfg.num_heads_total() + layer * cfg.ffn_dim;
            s..s + cfg.ffn_dim
        }
    }
}

/// Elementwise mean of per-example scores (the static score).
pub fn mean_scores(scores: &[ScoreVector]) -> Result<ScoreVector> {
    let first = scores.first().ok_or(Error::BatchTooSmall { got: 0, need: 1 })?;
    let n = first.values.len();
    let mut acc = vec![0.0; n];
    for s in scores {
        if s.values.len() != n {
            return Err(Error::LengthMismatch(s.values.len(), n));
        }
        acc.iter_mut().zip(&s.values).for_each(|(a, v)| *a += v);
    }
    let inv = 1.0 / scores.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(ScoreVector {
        criterion: first.criterion,
        example_id: None,
        values: acc,
        covered: first.covered.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_follow_canonical_order() {
        let cfg = ModelConfig::tiny();
        let values: Vec<f64> = (0..cfg.num_units()).map(|i| i as f64).collect();
        let s = ScoreVector::new(CriterionKind::L2Norm, None, values, &cfg);
        assert_eq!(s.group(&cfg, 1, UnitKind::Head), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(s.group(&cfg, 0, UnitKind::Neuron)[0], 8.0);
        assert_eq!(s.get(&cfg, UnitId::neuron(1, 0)), 40.0);
    }

    #[test]
    fn mean_of_two_is_elementwise() {
        let cfg = ModelConfig::tiny();
        let a = ScoreVector::new(CriterionKind::Fisher, Some(0), vec![1.0; cfg.num_units()], &cfg);
        let b = ScoreVector::new(CriterionKind::Fisher, Some(1), vec![3.0; cfg.num_units()], &cfg);
        let m = mean_scores(&[a, b]).unwrap();
        assert!(m.values.iter().all(|&v| v == 2.0));
        assert_eq!(m.example_id, None);
    }

    #[test]
    fn validate_allows_only_negative_infinity() {
        let cfg = ModelConfig::tiny();
        let mut s = ScoreVector::new(CriterionKind::Nwot, None, vec![0.0; cfg.num_units()], &cfg);
        s.values[3] = f64::NEG_INFINITY;
        s.validate(&cfg).unwrap();
        s.values[3] = f64::NAN;
        assert!(s.validate(&cfg).is_err());
    }
}
