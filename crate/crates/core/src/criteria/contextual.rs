//! Per-input criteria computed from one captured forward/backward pass.
//!
//! Head scores reduce the head's activation slice (`seq_len × head_dim`)
//! and its gradient. Neuron scores use the up-projection row of the neuron
//! and its gradient, except `l2norm` and `nwot`, which use the neuron's
//! hidden activation across positions.

use super::{CriterionKind, ScoreVector};
use crate::error::{Error, Result};
use crate::model::UnitCapture;

/// Accessors for per-unit slices of a capture.
pub(crate) struct Units<'a> {
    cap: &'a UnitCapture<f64>,
}

impl<'a> Units<'a> {
    pub(crate) fn new(cap: &'a UnitCapture<f64>) -> Self {
        Self { cap }
    }

    fn head_slice(&self, buf: &[f64], k: usize) -> Vec<f64> {
        let c = &self.cap.config;
        let (e, dh) = (c.embed_dim, c.head_dim);
        buf.chunks_exact(e).flat_map(|row| row[k * dh..(k + 1) * dh].iter().copied()).collect()
    }

    pub(crate) fn head_act(&self, l: usize, k: usize) -> Vec<f64> {
        self.head_slice(&self.cap.head_acts[l], k)
    }

    pub(crate) fn head_grad(&self, l: usize, k: usize) -> Result<Vec<f64>> {
        let g = self.cap.head_grads.as_ref().ok_or(Error::MissingCapture("head activation gradients"))?;
        Ok(self.head_slice(&g[l], k))
    }

    pub(crate) fn neuron_act(&self, l: usize, k: usize) -> Vec<f64> {
        let f = self.cap.config.ffn_dim;
        self.cap.neuron_acts[l].iter().skip(k).step_by(f).copied().collect()
    }

    pub(crate) fn neuron_weight(&self, l: usize, k: usize) -> &'a [f64] {
        let e = self.cap.config.embed_dim;
        &self.cap.up_weights[l][k * e..(k + 1) * e]
    }

    pub(crate) fn neuron_weight_grad(&self, l: usize, k: usize) -> Result<&'a [f64]> {
        let e = self.cap.config.embed_dim;
        let g = self.cap.up_grads.as_ref().ok_or(Error::MissingCapture("up-projection gradients"))?;
        Ok(&g[l][k * e..(k + 1) * e])
    }
}

/// Assembles a score vector from per-head and per-neuron scoring closures.
pub(crate) fn per_unit(
    cap: &UnitCapture<f64>,
    kind: CriterionKind,
    mut head: impl FnMut(&Units, usize, usize) -> Result<f64>,
    mut neuron: impl FnMut(&Units, usize, usize) -> Result<f64>,
) -> Result<ScoreVector> {
    let c = &cap.config;
    let units = Units::new(cap);
    let mut values = Vec::with_capacity(c.num_units());
    for l in 0..c.num_layers {
        for k in 0..c.heads_per_layer {
            values.push(head(&units, l, k)?);
        }
    }
    for l in 0..c.num_layers {
        for k in 0..c.ffn_dim {
            values.push(neuron(&units, l, k)?);
        }
    }
    Ok(ScoreVector::new(kind, None, values, c))
}

fn l2(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn abs_dot(a: &[f64], g: &[f64]) -> f64 {
    a.iter().zip(g).map(|(x, y)| (x * y).abs()).sum()
}

fn mean_sq_prod(a: &[f64], g: &[f64]) -> f64 {
    a.iter().zip(g).map(|(x, y)| (x * y) * (x * y)).sum::<f64>() / a.len() as f64
}

/// `log(mean_i (1 − a_i)²)`, or `-inf` when the mean is zero.
pub fn nwot_value(per_position: &[f64]) -> f64 {
    let inner = per_position.iter().map(|a| (1.0 - a) * (1.0 - a)).sum::<f64>() / per_position.len() as f64;
    if inner > 0.0 {
        inner.ln()
    } else {
        f64::NEG_INFINITY
    }
}

pub fn score_l2norm(cap: &UnitCapture<f64>) -> Result<ScoreVector> {
    per_unit(
        cap,
        CriterionKind::L2Norm,
        |u, l, k| Ok(l2(&u.head_act(l, k))),
        |u, l, k| Ok(l2(&u.neuron_act(l, k))),
    )
}

pub fn score_gradnorm(cap: &UnitCapture<f64>) -> Result<ScoreVector> {
    per_unit(
        cap,
        CriterionKind::GradNorm,
        |u, l, k| Ok(l2(&u.head_grad(l, k)?)),
        |u, l, k| Ok(l2(u.neuron_weight_grad(l, k)?)),
    )
}

pub fn score_plainact(cap: &UnitCapture<f64>) -> Result<ScoreVector> {
    per_unit(
        cap,
        CriterionKind::PlainAct,
        |u, l, k| Ok(abs_dot(&u.head_act(l, k), &u.head_grad(l, k)?)),
        |u, l, k| Ok(abs_dot(u.neuron_weight(l, k), u.neuron_weight_grad(l, k)?)),
    )
}

pub fn score_fisher(cap: &UnitCapture<f64>) -> Result<ScoreVector> {
    per_unit(
        cap,
        CriterionKind::Fisher,
        |u, l, k| Ok(mean_sq_prod(&u.head_act(l, k), &u.head_grad(l, k)?)),
        |u, l, k| Ok(mean_sq_prod(u.neuron_weight(l, k), u.neuron_weight_grad(l, k)?)),
    )
}

/// Sum over the unit's parameters (or activation elements) of
/// `|x · ∂L/∂x|`. With this aggregation it coincides with `plainact`.
pub fn score_snip(cap: &UnitCapture<f64>) -> Result<ScoreVector> {
    let saliency = |x: &[f64], g: &[f64]| -> f64 {
        let mut total = 0.0;
        for (xi, gi) in x.iter().zip(g) {
            total += (xi * gi).abs();
        }
        total
    };
    per_unit(
        cap,
        CriterionKind::Snip,
        |u, l, k| Ok(saliency(&u.head_act(l, k), &u.head_grad(l, k)?)),
        |u, l, k| Ok(saliency(u.neuron_weight(l, k), u.neuron_weight_grad(l, k)?)),
    )
}

/// Heads reduce their slice to one value per position by averaging over
/// channels; neurons use their post-ReLU activation per position.
pub fn score_nwot(cap: &UnitCapture<f64>) -> Result<ScoreVector> {
    let dh = cap.config.head_dim;
    per_unit(
        cap,
        CriterionKind::Nwot,
        |u, l, k| {
            let per_pos: Vec<f64> = u
                .head_act(l, k)
                .chunks_exact(dh)
                .map(|c| c.iter().sum::<f64>() / dh as f64)
                .collect();
            Ok(nwot_value(&per_pos))
        },
        |u, l, k| Ok(nwot_value(&u.neuron_act(l, k))),
    )
}

/// Signed first-order terms `Σ A ⊙ ∂L/∂A` (heads) and `Σ θ ⊙ ∂L/∂θ`
/// (neurons). Scaling a unit's output by `1 − ε` changes the loss by
/// `−ε` times this value to first order.
pub fn first_order_terms(cap: &UnitCapture<f64>) -> Result<Vec<f64>> {
    let dot = |a: &[f64], g: &[f64]| a.iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
    Ok(per_unit(
        cap,
        CriterionKind::PlainAct,
        |u, l, k| Ok(dot(&u.head_act(l, k), &u.head_grad(l, k)?)),
        |u, l, k| Ok(dot(u.neuron_weight(l, k), u.neuron_weight_grad(l, k)?)),
    )?
    .values)
}

/// Every contextual criterion except grasp, which also needs the model.
pub fn score_from_capture(kind: CriterionKind, cap: &UnitCapture<f64>) -> Result<ScoreVector> {
    match kind {
        CriterionKind::L2Norm => score_l2norm(cap),
        CriterionKind::GradNorm => score_gradnorm(cap),
        CriterionKind::PlainAct => score_plainact(cap),
        CriterionKind::Fisher => score_fisher(cap),
        CriterionKind::Snip => score_snip(cap),
        CriterionKind::Nwot => score_nwot(cap),
        CriterionKind::Grasp => Err(Error::MissingCapture("grasp needs the model for Hessian-vector products")),
        CriterionKind::Jacov | CriterionKind::Epenas => Err(Error::ContextualUnsupported(kind.name().to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use std::sync::Arc;

    /// One layer, one head of width 2, one neuron, embed width 2.
    fn capture(act: [f64; 2], grad: [f64; 2]) -> UnitCapture<f64> {
        let config = ModelConfig {
            num_layers: 1,
            embed_dim: 2,
            heads_per_layer: 1,
            head_dim: 2,
            ffn_dim: 1,
            vocab_size: 4,
            max_seq_len: 4,
            ..ModelConfig::tiny()
        };
        UnitCapture {
            config,
            seq_len: 1,
            head_acts: vec![act.to_vec()],
            head_grads: Some(vec![grad.to_vec()]),
            neuron_acts: vec![vec![act[0]]],
            up_weights: vec![Arc::new(act.to_vec())],
            up_grads: Some(vec![grad.to_vec()]),
            attn_out: vec![],
            hidden: vec![],
            embeddings: vec![],
        }
    }

    #[test]
    fn worked_values() {
        let cap = capture([3.0, 4.0], [1.0, 2.0]);
        assert_eq!(score_l2norm(&cap).unwrap().values[0], 5.0);
        let cap = capture([2.0, -1.0], [3.0, 4.0]);
        assert_eq!(score_plainact(&cap).unwrap().values, vec![10.0, 10.0]);
        assert_eq!(score_snip(&cap).unwrap().values, vec![10.0, 10.0]);
        let cap = capture([1.0, 1.0], [1.0, -1.0]);
        assert_eq!(score_fisher(&cap).unwrap().values[0], 1.0);
    }

    #[test]
    fn gradnorm_of_122_is_3() {
        let mut cap = capture([0.0, 0.0], [0.0, 0.0]);
        cap.up_grads = Some(vec![vec![1.0, 2.0, 2.0]]);
        cap.up_weights = vec![Arc::new(vec![0.0; 3])];
        cap.config.embed_dim = 3;
        cap.head_acts = vec![vec![0.0; 3]];
        cap.head_grads = Some(vec![vec![0.0; 3]]);
        cap.config.head_dim = 3;
        assert_eq!(score_gradnorm(&cap).unwrap().values[1], 3.0);
    }

    #[test]
    fn nwot_boundaries() {
        assert_eq!(nwot_value(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(nwot_value(&[1.0, 1.0]), f64::NEG_INFINITY);
        assert!((nwot_value(&[3.0, 3.0]) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn missing_gradients_are_reported() {
        let mut cap = capture([1.0, 1.0], [1.0, 1.0]);
        cap.head_grads = None;
        assert!(matches!(score_plainact(&cap), Err(Error::MissingCapture(_))));
        assert!(score_l2norm(&cap).is_ok());
    }
}
