use serde::{Deserialize, Serialize};

use super::dataset::{covered_entries, norm_groups};
use super::{DatasetExample, Predictor};
use crate::analytics::spearman;
use crate::criteria::group_range;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// How well predicted scores order units compared with the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    /// Per-example Spearman over every covered unit, averaged.
    pub spearman_global: f64,
    /// Per covered layer: per-example Spearman within the layer, averaged.
    pub spearman_per_layer: Vec<(usize, f64)>,
    /// Mean of `spearman_per_layer`.
    pub spearman_local: f64,
    pub mse: f64,
    /// Per-example global correlations, for significance testing.
    pub per_example: Vec<f64>,
    /// Examples whose global correlation was undefined and counted as 0.
    pub degenerate: usize,
}

fn rho_or_zero(a: &[f64], b: &[f64], degenerate: &mut usize) -> Result<f64> {
    match spearman(a, b) {
        Ok(r) => Ok(r),
        Err(Error::Degenerate(_)) => {
            *degenerate += 1;
            Ok(0.0)
        }
        Err(e) => Err(e),
    }
}

/// Fidelity of arbitrary predictions against targets, both in canonical order.
pub fn fidelity_from_predictions(
    predictions: &[Vec<f64>],
    targets: &[Vec<f64>],
    covered: &[bool],
    cfg: &ModelConfig,
) -> Result<Fidelity> {
    if predictions.is_empty() {
        return Err(Error::EmptyHeldout);
    }
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch(predictions.len(), targets.len()));
    }
    let layers: Vec<usize> = (0..cfg.num_layers).filter(|&l| covered[l]).collect();
    let mut degenerate = 0;
    let mut layer_degenerate = 0;
    let mut per_example = Vec::with_capacity(predictions.len());
    let mut layer_sums = vec![0.0; layers.len()];
    let mut sse = 0.0;
    let mut count = 0usize;
    for (p, t) in predictions.iter().zip(targets) {
        let pc: Vec<f64> = covered_entries(p, covered, cfg).collect();
        let tc: Vec<f64> = covered_entries(t, covered, cfg).collect();
        sse += pc.iter().zip(&tc).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += pc.len();
        per_example.push(rho_or_zero(&pc, &tc, &mut degenerate)?);
        for (slot, &l) in layer_sums.iter_mut().zip(&layers) {
            let (lp, lt): (Vec<f64>, Vec<f64>) = norm_groups(cfg)
                .filter(|&(gl, _)| gl == l)
                .flat_map(|(gl, k)| group_range(cfg, gl, k))
                .map(|i| (p[i], t[i]))
                .unzip();
            *slot += rho_or_zero(&lp, &lt, &mut layer_degenerate)?;
        }
    }
    let n = predictions.len() as f64;
    let spearman_per_layer: Vec<(usize, f64)> = layers.iter().zip(&layer_sums).map(|(&l, s)| (l, s / n)).collect();
    let spearman_local = if spearman_per_layer.is_empty() {
        0.0
    } else {
        spearman_per_layer.iter().map(|(_, r)| r).sum::<f64>() / spearman_per_layer.len() as f64
    };
    Ok(Fidelity {
        spearman_global: per_example.iter().sum::<f64>() / n,
        spearman_per_layer,
        spearman_local,
        mse: if count == 0 { 0.0 } else { sse / count as f64 },
        per_example,
        degenerate,
    })
}

/// Fidelity of a predictor on held-out examples, against their normalized targets.
pub fn predictor_fidelity(predictor: &Predictor, heldout: &[DatasetExample]) -> Result<Fidelity> {
    if heldout.is_empty() {
        return Err(Error::EmptyHeldout);
    }
    let predictions = heldout
        .iter()
        .map(|ex| predictor.predict_values(&ex.feature))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<f64>> = heldout.iter().map(|ex| ex.target.clone()).collect();
    let cfg = predictor.model_config();
    fidelity_from_predictions(&predictions, &targets, &predictor.config().covered_layers(cfg), cfg)
}
