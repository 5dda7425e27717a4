use super::contextual::per_unit;
use super::{CriterionKind, ScoreVector};
use crate::error::{Error, Result};
use crate::model::{Hooks, LossScope, Track, TransformerModel, UnitCapture};
use crate::tensor::{hessian_vector_product, Tensor};

/// Default finite-difference step for the Hessian-vector products.
pub const GRASP_EPS: f64 = 1e-4;

fn split_views<'t>(flat: Tensor<'t, f64>, parts: usize, shape: [usize; 2]) -> Result<Vec<Tensor<'t, f64>>> {
    let n = shape[0] * shape[1];
    (0..parts).map(|p| flat.view(p * n, &shape)).collect()
}

fn hvp_or_zero<F>(loss_fn: F, point: &[f64], direction: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&'t crate::tensor::Tape<f64>, Tensor<'t, f64>) -> Result<Tensor<'t, f64>>,
{
    match hessian_vector_product(loss_fn, point, &[point.len()], direction, eps) {
        Err(Error::ZeroVector) => Ok(vec![0.0; point.len()]),
        other => other,
    }
}

/// `‖−(H·g) ⊙ x‖₁` per unit, where `g` is the loss gradient and `H` the
/// loss Hessian: over all head activations jointly for heads, over all
/// up-projection weights jointly for neurons.
pub fn score_grasp(
    model: &TransformerModel<f64>,
    tokens: &[u32],
    scope: LossScope,
    cap: &UnitCapture<f64>,
    eps: f64,
) -> Result<ScoreVector> {
    let cfg = model.config();
    let (n, s, e, f) = (cfg.num_layers, cap.seq_len, cfg.embed_dim, cfg.ffn_dim);
    if tokens.len() != s {
        return Err(Error::LengthMismatch(tokens.len(), s));
    }
    let head_grads = cap.head_grads.as_ref().ok_or(Error::MissingCapture("head activation gradients"))?;
    let up_grads = cap.up_grads.as_ref().ok_or(Error::MissingCapture("up-projection gradients"))?;
    let missing_loss = || Error::MissingCapture("loss needs at least two tokens");

    let head_dir: Vec<f64> = head_grads.concat();
    let head_hg = hvp_or_zero(
        |tape, flat| {
            let hooks = Hooks {
                head_offsets: Some(split_views(flat, n, [s, e])?),
                up_weights: None,
            };
            model.trace(tape, tokens, None, scope, Track::Nothing, hooks)?.loss.ok_or_else(missing_loss)
        },
        &vec![0.0; head_dir.len()],
        &head_dir,
        eps,
    )?;

    let up_point: Vec<f64> = cap.up_weights.iter().flat_map(|w| w.iter().copied()).collect();
    let up_dir: Vec<f64> = up_grads.concat();
    let up_hg = hvp_or_zero(
        |tape, flat| {
            let hooks = Hooks {
                head_offsets: None,
                up_weights: Some(split_views(flat, n, [f, e])?),
            };
            model.trace(tape, tokens, None, scope, Track::Nothing, hooks)?.loss.ok_or_else(missing_loss)
        },
        &up_point,
        &up_dir,
        eps,
    )?;

    let dh = cfg.head_dim;
    per_unit(
        cap,
        CriterionKind::Grasp,
        |u, l, k| {
            let act = u.head_act(l, k);
            let hg = &head_hg[l * s * e..(l + 1) * s * e];
            let hg_slice = hg.chunks_exact(e).flat_map(|row| row[k * dh..(k + 1) * dh].iter());
            Ok(act.iter().zip(hg_slice).map(|(a, h)| (-h * a).abs()).sum())
        },
        |u, l, k| {
            let w = u.neuron_weight(l, k);
            let off = l * f * e + k * e;
            Ok(w.iter().zip(&up_hg[off..off + e]).map(|(a, h)| (-h * a).abs()).sum())
        },
    )
}
