use serde::{Deserialize, Serialize};

use super::{PredictorConfig, Topology};
use crate::error::{Error, Result};
use crate::model::{Capture, ForwardOptions, TransformerModel};
use crate::tensor::Float;

/// Predictor input, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Feature {
    /// Row `i` of a `[rows, E]` feature.
    pub fn row(&self, i: usize) -> &[f32] {
        let w = *self.shape.last().unwrap_or(&0);
        &self.data[i * w..(i + 1) * w]
    }
}

/// Reads the predictor input for `prompt` from a dense forward pass.
///
/// shadow: layer-0 attention output at the last position, `[E]`.
/// dejavu: residual stream after each host layer at the last position, `[hosts, E]`.
/// fullseq: token plus position embeddings, `[s, E]`.
pub fn extract_features<T: Float>(model: &TransformerModel<T>, prompt: &[u32], cfg: &PredictorConfig) -> Result<Feature> {
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let out = model.forward(
        prompt,
        &ForwardOptions {
            capture: Capture::Activations,
            ..Default::default()
        },
    )?;
    let cap = out.capture.ok_or(Error::MissingCapture("forward returned no capture"))?;
    let e = model.config().embed_dim;
    let s = cap.seq_len;
    let last = |rows: &[T]| rows[(s - 1) * e..s * e].iter().map(|x| x.as_f64() as f32).collect::<Vec<f32>>();
    Ok(match cfg.topology {
        Topology::Shadow => Feature {
            shape: vec![e],
            data: last(&cap.attn_out[0]),
        },
        Topology::DejaVu => {
            let hosts = cfg.dejavu_hosts(model.config());
            Feature {
                shape: vec![hosts.len(), e],
                data: hosts.iter().flat_map(|&(h, _)| last(&cap.hidden[h])).collect(),
            }
        }
        Topology::FullSeq => Feature {
            shape: vec![s, e],
            data: cap.embeddings.iter().map(|x| x.as_f64() as f32).collect(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use std::sync::Arc;

    #[test]
    fn shadow_feature_ignores_later_layers() {
        let cfg = PredictorConfig::default();
        let mut m = TransformerModel::<f64>::init(ModelConfig::tiny(), 1).unwrap();
        let a = extract_features(&m, &[3, 1, 4, 1, 5], &cfg).unwrap();
        Arc::make_mut(&mut m.layers[1].wq.data).iter_mut().for_each(|x| *x *= 3.0);
        let b = extract_features(&m, &[3, 1, 4, 1, 5], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape, vec![m.config().embed_dim]);
    }

    #[test]
    fn feature_shapes() {
        let m = TransformerModel::<f32>::init(ModelConfig::toy(), 2).unwrap();
        let dv = PredictorConfig {
            topology: Topology::DejaVu,
            ..Default::default()
        };
        assert_eq!(extract_features(&m, &[7], &dv).unwrap().shape, vec![2, 128]);
        let fs = PredictorConfig {
            topology: Topology::FullSeq,
            ..Default::default()
        };
        assert_eq!(extract_features(&m, &[7, 8, 9], &fs).unwrap().shape, vec![3, 128]);
        assert!(matches!(extract_features(&m, &[], &fs), Err(Error::EmptyPrompt)));
    }
}
