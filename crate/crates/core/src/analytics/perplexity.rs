use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{MaskSet, TransformerModel};
use crate::predictor::{extract_features, Predictor};
use crate::pruning::{build_mask, PruneSpec};
use crate::tensor::Float;

/// Where the mask for each evaluation window comes from.
#[derive(Debug, Clone, Copy)]
pub enum MaskSource<'a> {
    Dense,
    Static(&'a MaskSet),
    /// Rebuilt per window from the predictor's scores on the window prefix.
    Predicted { predictor: &'a Predictor, spec: &'a PruneSpec },
}

/// Consecutive non-overlapping windows of `len` tokens; a trailing window
/// shorter than two tokens carries no prediction and is dropped.
pub fn eval_windows(stream: &[u32], len: usize) -> Vec<&[u32]> {
    stream.chunks(len.max(2)).filter(|w| w.len() >= 2).collect()
}

/// Summed NLL and prediction count of one window.
pub fn window_nll<T: Float>(model: &TransformerModel<T>, window: &[u32], source: MaskSource) -> Result<(f64, usize)> {
    match source {
        MaskSource::Dense => model.nll_sum(window, None),
        MaskSource::Static(mask) => model.nll_sum(window, Some(mask)),
        MaskSource::Predicted { predictor, spec } => {
            let feature = extract_features(model, &window[..window.len() - 1], predictor.config())?;
            let scores = predictor.predict_scores(&feature)?;
            let mask = build_mask(&scores, spec, model.config())?;
            model.nll_sum(window, Some(&mask))
        }
    }
}

/// `exp` of the mean next-token NLL over non-overlapping windows of
/// `window_len` tokens (at most the model's context).
pub fn perplexity<T: Float>(model: &TransformerModel<T>, source: MaskSource, stream: &[u32], window_len: usize) -> Result<f64> {
    if stream.len() < 2 {
        return Err(Error::EmptyStream);
    }
    if let MaskSource::Static(mask) = source {
        mask.validate(model.config())?;
    }
    let len = window_len.min(model.config().max_seq_len);
    let parts = eval_windows(stream, len)
        .par_iter()
        .map(|w| window_nll(model, w, source))
        .collect::<Result<Vec<_>>>()?;
    let (total, count) = parts.iter().fold((0.0, 0usize), |(s, n), &(a, b)| (s + a, n + b));
    Ok((total / count as f64).exp())
}
