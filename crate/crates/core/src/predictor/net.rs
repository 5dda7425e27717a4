use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::covered_entries;
use super::{CriteriaDataset, DatasetExample, Feature, PredictorConfig, Topology};
use crate::criteria::{group_range, CriterionKind, ScoreVector};
use crate::error::{Error, Result};
use crate::model::{Container, ModelConfig, TensorRecord, UnitKind};
use crate::optim::{cosine_lr, AdamW};
use crate::tensor::{Tape, Tensor};

const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
struct NamedParam {
    name: String,
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
}

/// A trained sparsity predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    config: PredictorConfig,
    model: ModelConfig,
    criterion: CriterionKind,
    /// Layers predicted by each output head, in head order.
    outputs: Vec<Vec<usize>>,
    params: Vec<NamedParam>,
}

/// Per-epoch mean squared error on the train and held-out splits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictorLog {
    pub train_mse: Vec<f64>,
    pub heldout_mse: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PredictorHeader {
    kind: String,
    topology: Topology,
    criterion: CriterionKind,
    predictor: PredictorConfig,
    model: ModelConfig,
}

/// Canonical indices of the units of `layers`: per layer, heads then neurons.
fn unit_indices(cfg: &ModelConfig, layers: &[usize]) -> Vec<usize> {
    layers
        .iter()
        .flat_map(|&l| group_range(cfg, l, UnitKind::Head).chain(group_range(cfg, l, UnitKind::Neuron)))
        .collect()
}

fn output_layers(config: &PredictorConfig, model: &ModelConfig) -> Vec<Vec<usize>> {
    match config.topology {
        Topology::Shadow => vec![(1..model.num_layers).collect()],
        Topology::FullSeq => vec![(0..model.num_layers).collect()],
        Topology::DejaVu => config.dejavu_hosts(model).into_iter().map(|(_, l)| l).collect(),
    }
}

fn layout(config: &PredictorConfig, model: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let e = model.embed_dim;
    let p = config.hidden_dim_for(model);
    let mut out = Vec::new();
    if config.topology == Topology::FullSeq {
        out.push(("encoder.ln.gamma".into(), vec![e]));
        out.push(("encoder.ln.beta".into(), vec![e]));
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("encoder.{w}"), vec![e, e]));
        }
        out.push(("encoder.lnf.gamma".into(), vec![e]));
        out.push(("encoder.lnf.beta".into(), vec![e]));
    }
    for (j, layers) in output_layers(config, model).iter().enumerate() {
        let width = unit_indices(model, layers).len();
        out.push((format!("mlp.{j}.w1"), vec![e, p]));
        out.push((format!("mlp.{j}.b1"), vec![p]));
        out.push((format!("mlp.{j}.w2"), vec![p, width]));
        out.push((format!("mlp.{j}.b2"), vec![width]));
    }
    out
}

/// Parameter handles on one tape.
struct Leaves<'t> {
    encoder: Option<[Tensor<'t, f32>; 8]>,
    mlps: Vec<[Tensor<'t, f32>; 4]>,
}

impl Predictor {
    /// Fresh weights: linear layers `U(±1/√fan_in)`, norms at identity.
    pub fn init(config: &PredictorConfig, model: &ModelConfig, criterion: CriterionKind, seed: u64) -> Result<Self> {
        config.validate(model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout(config, model)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with("gamma") {
                    vec![1.0; n]
                } else if name.ends_with("beta") {
                    vec![0.0; n]
                } else {
                    let fan_in = if name.ends_with(".b1") {
                        model.embed_dim
                    } else if name.ends_with(".b2") {
                        config.hidden_dim_for(model)
                    } else {
                        shape[0]
                    };
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                NamedParam {
                    name,
                    shape,
                    data: Arc::new(data),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            model: model.clone(),
            criterion,
            outputs: output_layers(config, model),
            params,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    pub fn criterion(&self) -> CriterionKind {
        self.criterion
    }

    pub fn topology(&self) -> Topology {
        self.config.topology
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Flat copy of every weight, in storage order.
    pub fn flat_params(&self) -> Vec<f32> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    fn leaves<'t>(&self, tape: &'t Tape<f32>, trainable: bool) -> Result<Leaves<'t>> {
        let ts = self
            .params
            .iter()
            .map(|p| tape.leaf(p.data.clone(), &p.shape, trainable))
            .collect::<Result<Vec<_>>>()?;
        let (encoder, rest) = if self.config.topology == Topology::FullSeq {
            let (a, b) = ts.split_at(8);
            (Some(<[Tensor<f32>; 8]>::try_from(a).expect("encoder has 8 tensors")), b)
        } else {
            (None, &ts[..])
        };
        Ok(Leaves {
            encoder,
            mlps: rest
                .chunks_exact(4)
                .map(|c| <[Tensor<f32>; 4]>::try_from(c).expect("mlp has 4 tensors"))
                .collect(),
        })
    }

    pub fn check_feature(&self, feature: &Feature) -> Result<()> {
        let e = self.model.embed_dim;
        let ok = match self.config.topology {
            Topology::Shadow => feature.shape == [e],
            Topology::DejaVu => feature.shape == [self.outputs.len(), e],
            Topology::FullSeq => {
                feature.shape.len() == 2
                    && feature.shape[1] == e
                    && (1..=self.model.max_seq_len).contains(&feature.shape[0])
            }
        };
        if ok && feature.data.len() == feature.shape.iter().product::<usize>() {
            Ok(())
        } else {
            let expected = match self.config.topology {
                Topology::Shadow => vec![e],
                Topology::DejaVu => vec![self.outputs.len(), e],
                Topology::FullSeq => vec![self.model.max_seq_len, e],
            };
            Err(Error::FeatureShapeMismatch {
                expected,
                got: feature.shape.clone(),
            })
        }
    }

    /// Outputs of every head for a batch of features, each `[B, width_j]`.
    fn forward_batch<'t>(&self, tape: &'t Tape<f32>, leaves: &Leaves<'t>, batch: &[&Feature]) -> Result<Vec<Tensor<'t, f32>>> {
        let e = self.model.embed_dim;
        let b = batch.len();
        let mlp = |x: Tensor<'t, f32>, w: &[Tensor<'t, f32>; 4]| -> Result<Tensor<'t, f32>> {
            x.matmul(w[0])?.add(w[1])?.relu()?.matmul(w[2])?.add(w[3])
        };
        match self.config.topology {
            Topology::Shadow => {
                let x: Vec<f32> = batch.iter().flat_map(|f| f.data.iter().copied()).collect();
                Ok(vec![mlp(tape.constant(x, &[b, e])?, &leaves.mlps[0])?])
            }
            Topology::DejaVu => (0..self.outputs.len())
                .map(|j| {
                    let x: Vec<f32> = batch.iter().flat_map(|f| f.row(j).iter().copied()).collect();
                    mlp(tape.constant(x, &[b, e])?, &leaves.mlps[j])
                })
                .collect(),
            Topology::FullSeq => {
                let enc = leaves.encoder.as_ref().expect("fullseq has an encoder");
                let outs = batch
                    .iter()
                    .map(|f| {
                        let x = tape.constant(f.data.clone(), &f.shape)?;
                        mlp(self.encode(x, enc)?, &leaves.mlps[0])
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(outs)
            }
        }
    }

    /// One pre-norm bidirectional attention block, final norm, mean pool: `[1, E]`.
    fn encode<'t>(&self, x: Tensor<'t, f32>, w: &[Tensor<'t, f32>; 8]) -> Result<Tensor<'t, f32>> {
        let e = self.model.embed_dim;
        let heads = self.config.encoder_heads;
        let d = e / heads;
        let h = x.layer_norm(w[0], w[1], LN_EPS)?;
        let (q, k, v) = (h.matmul(w[2])?, h.matmul(w[3])?, h.matmul(w[4])?);
        let scale = 1.0 / (d as f32).sqrt();
        let parts = (0..heads)
            .map(|i| {
                let (qi, ki, vi) = (q.slice_cols(i * d, d)?, k.slice_cols(i * d, d)?, v.slice_cols(i * d, d)?);
                qi.matmul_nt(ki)?.scale(scale)?.softmax_rows()?.matmul(vi)
            })
            .collect::<Result<Vec<_>>>()?;
        let attn = Tensor::concat_cols(&parts)?.matmul(w[5])?;
        x.add(attn)?.layer_norm(w[6], w[7], LN_EPS)?.mean_rows()
    }

    /// Targets of head `j` for a batch, `[B, width_j]`.
    fn head_targets(&self, j: usize, batch: &[&DatasetExample]) -> Vec<f32> {
        let idx = unit_indices(&self.model, &self.outputs[j]);
        batch.iter().flat_map(|ex| idx.iter().map(|&i| ex.target[i] as f32)).collect()
    }

    /// Sum of squared errors over a batch and the number of terms.
    fn batch_sse<'t>(&self, tape: &'t Tape<f32>, leaves: &Leaves<'t>, batch: &[&DatasetExample]) -> Result<(Tensor<'t, f32>, usize)> {
        let feats: Vec<&Feature> = batch.iter().map(|ex| &ex.feature).collect();
        let outs = self.forward_batch(tape, leaves, &feats)?;
        let mut total: Option<Tensor<f32>> = None;
        let mut count = 0;
        if self.config.topology == Topology::FullSeq {
            for (out, ex) in outs.into_iter().zip(batch) {
                let t = tape.constant(self.head_targets(0, &[*ex]), &out.shape())?;
                let sse = out.sub(t)?.square()?.sum()?;
                count += out.numel();
                total = Some(match total {
                    Some(acc) => acc.add(sse)?,
                    None => sse,
                });
            }
        } else {
            for (j, out) in outs.into_iter().enumerate() {
                let t = tape.constant(self.head_targets(j, batch), &out.shape())?;
                let sse = out.sub(t)?.square()?.sum()?;
                count += out.numel();
                total = Some(match total {
                    Some(acc) => acc.add(sse)?,
                    None => sse,
                });
            }
        }
        Ok((total.expect("batch is non-empty"), count))
    }

    /// Raw predictions in canonical unit order; uncovered layers are 0.
    pub fn predict_values(&self, feature: &Feature) -> Result<Vec<f64>> {
        self.check_feature(feature)?;
        let tape = Tape::<f32>::new();
        let leaves = self.leaves(&tape, false)?;
        let outs = self.forward_batch(&tape, &leaves, &[feature])?;
        let mut values = vec![0.0; self.model.num_units()];
        let per_head: Vec<Vec<f32>> = if self.config.topology == Topology::FullSeq {
            vec![outs[0].to_vec()]
        } else {
            outs.iter().map(|o| o.to_vec()).collect()
        };
        // Later hosts overwrite earlier ones where windows overlap.
        for (j, out) in per_head.iter().enumerate() {
            for (&i, &v) in unit_indices(&self.model, &self.outputs[j]).iter().zip(out) {
                values[i] = f64::from(v);
            }
        }
        Ok(values)
    }

    /// Predicted scores; uncovered layers are marked as such and left dense by masks.
    pub fn predict_scores(&self, feature: &Feature) -> Result<ScoreVector> {
        let values = self.predict_values(feature)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor output"));
        }
        Ok(ScoreVector {
            criterion: self.criterion,
            example_id: None,
            values,
            covered: self.config.covered_layers(&self.model),
        })
    }

    /// Mean squared error over the covered target entries of `examples`.
    pub fn mse(&self, examples: &[DatasetExample]) -> Result<f64> {
        let covered = self.config.covered_layers(&self.model);
        let mut sse = 0.0;
        let mut n = 0usize;
        for ex in examples {
            let pred = self.predict_values(&ex.feature)?;
            for (p, t) in covered_entries(&pred, &covered, &self.model).zip(covered_entries(&ex.target, &covered, &self.model)) {
                sse += (p - t).powi(2);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptyHeldout);
        }
        Ok(sse / n as f64)
    }

    pub fn to_container(&self) -> Container {
        let header = PredictorHeader {
            kind: "predictor".into(),
            topology: self.config.topology,
            criterion: self.criterion,
            predictor: self.config.clone(),
            model: self.model.clone(),
        };
        Container {
            config_json: serde_json::to_string(&header).expect("header serializes"),
            tensors: self
                .params
                .iter()
                .map(|p| TensorRecord::from_values(&p.name, &p.shape, &p.data))
                .collect(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let header: PredictorHeader =
            serde_json::from_str(&c.config_json).map_err(|e| Error::Format(format!("config block: {e}")))?;
        if header.kind != "predictor" {
            return Err(Error::ConfigMismatch(format!("expected a predictor checkpoint, found {}", header.kind)));
        }
        let mut p = Self::init(&header.predictor, &header.model, header.criterion, 0)?;
        let expected: Vec<(String, Vec<usize>)> = p.params.iter().map(|q| (q.name.clone(), q.shape.clone())).collect();
        let records = c.take_expected(&expected)?;
        for (q, rec) in p.params.iter_mut().zip(records) {
            q.data = Arc::new(rec.values());
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Fits a predictor with AdamW, per-epoch cosine-annealed learning rate and
/// MSE loss. Deterministic for a given seed.
pub fn train_predictor(dataset: &CriteriaDataset, config: &PredictorConfig, seed: u64) -> Result<(Predictor, PredictorLog)> {
    if config.topology != dataset.config.topology || config.dejavu_hosts(&dataset.model) != dataset.config.dejavu_hosts(&dataset.model) {
        return Err(Error::ConfigMismatch("predictor topology differs from the dataset's".into()));
    }
    let train = dataset.train();
    let heldout = dataset.heldout();
    if train.len() < 2 * config.batch_size {
        return Err(Error::DatasetTooSmall(format!(
            "{} training examples, need at least two batches of {}",
            train.len(),
            config.batch_size
        )));
    }
    if heldout.is_empty() {
        return Err(Error::DatasetTooSmall("held-out split is empty".into()));
    }
    let mut predictor = Predictor::init(config, &dataset.model, dataset.criterion, seed)?;
    for ex in dataset.examples.iter() {
        predictor.check_feature(&ex.feature)?;
    }
    let sizes: Vec<usize> = predictor.params.iter().map(|p| p.data.len()).collect();
    let mut opt = AdamW::<f32>::new(&sizes, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = PredictorLog::default();
    for epoch in 0..config.epochs {
        let lr = cosine_lr(config.lr, 0.0, epoch, config.epochs);
        order.shuffle(&mut rng);
        let mut sse_total = 0.0;
        let mut count_total = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&DatasetExample> = chunk.iter().map(|&i| &train[i]).collect();
            let tape = Tape::<f32>::new();
            let leaves = predictor.leaves(&tape, true)?;
            let (sse, count) = predictor.batch_sse(&tape, &leaves, &batch)?;
            sse_total += f64::from(sse.item()?);
            count_total += count;
            sse.scale(1.0 / count as f32)?.backward()?;
            let grads: Vec<Vec<f32>> = leaves
                .encoder
                .iter()
                .flatten()
                .chain(leaves.mlps.iter().flatten())
                .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
                .collect();
            let mut params: Vec<&mut Vec<f32>> = predictor.params.iter_mut().map(|p| Arc::make_mut(&mut p.data)).collect();
            opt.step(&mut params, &grads, lr);
        }
        log.train_mse.push(sse_total / count_total as f64);
        log.heldout_mse.push(predictor.mse(heldout)?);
        log::debug!(
            "predictor epoch {epoch}: train {:.5} held-out {:.5}",
            log.train_mse[epoch],
            log.heldout_mse[epoch]
        );
    }
    Ok((predictor, log))
}
