use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{MaskSet, ModelConfig, UnitScales};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// A named weight buffer. The data is shared so a forward pass can put it on
/// a tape without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub data: Arc<Vec<T>>,
}

impl<T: Float> Param<T> {
    fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, INIT_STD).expect("valid std");
        let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    fn cast<U: Float>(&self) -> Param<U> {
        Param {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect()),
        }
    }
}

/// Weights of one decoder block. Projections are stored so that neuron `k`
/// is row `k` of both `w_up` and `w_down`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_gamma: Param<T>,
    pub ln1_beta: Param<T>,
    /// `[E, E]`, applied as `x · W`.
    pub wq: Param<T>,
    pub wk: Param<T>,
    pub wv: Param<T>,
    /// `[E, E]`; rows `k·d_h..(k+1)·d_h` receive head `k`.
    pub wo: Param<T>,
    pub ln2_gamma: Param<T>,
    pub ln2_beta: Param<T>,
    /// `[F, E]`, applied as `x · Wᵀ`.
    pub w_up: Param<T>,
    /// `[F, E]`.
    pub w_down: Param<T>,
}

/// Pre-LN decoder-only transformer with ReLU FFN, learned positions and an
/// LM head tied to the token embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel<T> {
    config: ModelConfig,
    pub tok_emb: Param<T>,
    pub pos_emb: Param<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub lnf_gamma: Param<T>,
    pub lnf_beta: Param<T>,
}

/// What a forward pass records besides logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Capture {
    #[default]
    None,
    Activations,
    ActivationsAndGrads,
}

/// Which next-token predictions enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossScope {
    /// Every position of the sequence.
    #[default]
    Full,
    /// Only predictions of tokens at index `>= prompt_len`.
    TargetOnly { prompt_len: usize },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions<'a> {
    pub mask: Option<&'a MaskSet>,
    pub capture: Capture,
    pub loss_scope: LossScope,
}

/// Per-unit signals recorded by a forward pass. Buffers are row-major over
/// sequence positions.
#[derive(Debug, Clone)]
pub struct UnitCapture<T> {
    pub config: ModelConfig,
    pub seq_len: usize,
    /// Per layer `[s, E]`: concatenated head outputs before the output
    /// projection (before gating).
    pub head_acts: Vec<Vec<T>>,
    /// Per layer `[s, E]`: `∂L/∂` of `head_acts`.
    pub head_grads: Option<Vec<Vec<T>>>,
    /// Per layer `[s, F]`: post-ReLU FFN hidden activations (before gating).
    pub neuron_acts: Vec<Vec<T>>,
    /// Per layer `[F, E]`: up-projection weights.
    pub up_weights: Vec<Arc<Vec<T>>>,
    /// Per layer `[F, E]`: `∂L/∂` of `up_weights`.
    pub up_grads: Option<Vec<Vec<T>>>,
    /// Per layer `[s, E]`: attention sublayer output added to the residual.
    pub attn_out: Vec<Vec<T>>,
    /// Per layer `[s, E]`: residual stream after the layer.
    pub hidden: Vec<Vec<T>>,
    /// `[s, E]`: token plus positional embedding.
    pub embeddings: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `[s, V]`.
    pub logits: Vec<T>,
    pub seq_len: usize,
    /// Mean next-token cross-entropy; `None` for single-token input.
    pub loss: Option<T>,
    pub capture: Option<UnitCapture<T>>,
}

/// Which leaves require gradients on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Track {
    Nothing,
    Units,
    Everything,
}

/// Replacement leaves injected into a taped forward.
pub(crate) struct Hooks<'t, T: Float> {
    /// Per layer `[s, E]`, added to the concatenated head outputs.
    pub head_offsets: Option<Vec<Tensor<'t, T>>>,
    /// Per layer `[F, E]`, used in place of the stored up-projections.
    pub up_weights: Option<Vec<Tensor<'t, T>>>,
}

impl<T: Float> Default for Hooks<'_, T> {
    fn default() -> Self {
        Self {
            head_offsets: None,
            up_weights: None,
        }
    }
}

/// Handles into a taped forward.
pub(crate) struct Trace<'t, T: Float> {
    pub logits: Tensor<'t, T>,
    pub loss: Option<Tensor<'t, T>>,
    pub embeddings: Tensor<'t, T>,
    pub head_acts: Vec<Tensor<'t, T>>,
    pub neuron_acts: Vec<Tensor<'t, T>>,
    pub up: Vec<Tensor<'t, T>>,
    pub attn_out: Vec<Tensor<'t, T>>,
    pub hidden: Vec<Tensor<'t, T>>,
    /// Parameter leaves in [`TransformerModel::params`] order.
    pub params: Vec<Tensor<'t, T>>,
}

impl<T: Float> TransformerModel<T> {
    /// Random initialization, N(0, 0.02) for matrices, unit LN gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, f) = (config.embed_dim, config.ffn_dim);
        let tok_emb = Param::normal(&[config.vocab_size, e], &mut rng);
        let pos_emb = Param::normal(&[config.max_seq_len, e], &mut rng);
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                ln1_gamma: Param::filled(&[e], T::one()),
                ln1_beta: Param::filled(&[e], T::zero()),
                wq: Param::normal(&[e, e], &mut rng),
                wk: Param::normal(&[e, e], &mut rng),
                wv: Param::normal(&[e, e], &mut rng),
                wo: Param::normal(&[e, e], &mut rng),
                ln2_gamma: Param::filled(&[e], T::one()),
                ln2_beta: Param::filled(&[e], T::zero()),
                w_up: Param::normal(&[f, e], &mut rng),
                w_down: Param::normal(&[f, e], &mut rng),
            })
            .collect();
        Ok(Self {
            tok_emb,
            pos_emb,
            layers,
            lnf_gamma: Param::filled(&[e], T::one()),
            lnf_beta: Param::filled(&[e], T::zero()),
            config,
        })
    }

    /// Every weight zero and every LN gain zero: logits are identically zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::init(config, 0)?;
        for (_, p) in m.params_mut() {
            *p = Param::filled(&p.shape, T::zero());
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.numel()).sum()
    }

    /// Parameters in canonical (checkpoint) order.
    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (l, w) in self.layers.iter().enumerate() {
            for (name, p) in [
                ("ln1.gamma", &w.ln1_gamma),
                ("ln1.beta", &w.ln1_beta),
                ("attn.wq", &w.wq),
                ("attn.wk", &w.wk),
                ("attn.wv", &w.wv),
                ("attn.wo", &w.wo),
                ("ln2.gamma", &w.ln2_gamma),
                ("ln2.beta", &w.ln2_beta),
                ("ffn.w_up", &w.w_up),
                ("ffn.w_down", &w.w_down),
            ] {
                out.push((format!("layers.{l}.{name}"), p));
            }
        }
        out.push(("lnf.gamma".to_string(), &self.lnf_gamma));
        out.push(("lnf.beta".to_string(), &self.lnf_beta));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = vec![
            ("tok_emb".to_string(), &mut self.tok_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (l, w) in self.layers.iter_mut().enumerate() {
            for (name, p) in [
                ("ln1.gamma", &mut w.ln1_gamma),
                ("ln1.beta", &mut w.ln1_beta),
                ("attn.wq", &mut w.wq),
                ("attn.wk", &mut w.wk),
                ("attn.wv", &mut w.wv),
                ("attn.wo", &mut w.wo),
                ("ln2.gamma", &mut w.ln2_gamma),
                ("ln2.beta", &mut w.ln2_beta),
                ("ffn.w_up", &mut w.w_up),
                ("ffn.w_down", &mut w.w_down),
            ] {
                out.push((format!("layers.{l}.{name}"), p));
            }
        }
        out.push(("lnf.gamma".to_string(), &mut self.lnf_gamma));
        out.push(("lnf.beta".to_string(), &mut self.lnf_beta));
        out
    }

    /// Converts every weight to another precision.
    pub fn cast<U: Float>(&self) -> TransformerModel<U> {
        TransformerModel {
            config: self.config.clone(),
            tok_emb: self.tok_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|w| LayerWeights {
                    ln1_gamma: w.ln1_gamma.cast(),
                    ln1_beta: w.ln1_beta.cast(),
                    wq: w.wq.cast(),
                    wk: w.wk.cast(),
                    wv: w.wv.cast(),
                    wo: w.wo.cast(),
                    ln2_gamma: w.ln2_gamma.cast(),
                    ln2_beta: w.ln2_beta.cast(),
                    w_up: w.w_up.cast(),
                    w_down: w.w_down.cast(),
                })
                .collect(),
            lnf_gamma: self.lnf_gamma.cast(),
            lnf_beta: self.lnf_beta.cast(),
        }
    }

    pub(crate) fn check_tokens(&self, tokens: &[u32]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        let v = self.config.vocab_size;
        tokens
            .iter()
            .map(|&t| {
                let t = t as usize;
                if t < v {
                    Ok(t)
                } else {
                    Err(Error::InvalidTokenId { id: t, vocab: v })
                }
            })
            .collect()
    }

    /// Per-position loss weights, or `None` when no prediction is scored.
    pub(crate) fn loss_weights(seq_len: usize, scope: LossScope) -> Result<Option<Vec<T>>> {
        if seq_len < 2 {
            return Ok(None);
        }
        let first = match scope {
            LossScope::Full => 0,
            LossScope::TargetOnly { prompt_len } => prompt_len.max(1) - 1,
        };
        let count = (seq_len - 1).saturating_sub(first);
        if count == 0 {
            return Err(Error::Domain {
                op: "loss",
                detail: "target-only loss has no target positions".into(),
            });
        }
        let w = T::one() / T::from_usize(count).unwrap();
        Ok(Some((0..seq_len - 1).map(|i| if i >= first { w } else { T::zero() }).collect()))
    }

    /// Records a forward pass on `tape`.
    pub(crate) fn trace<'t>(
        &self,
        tape: &'t Tape<T>,
        tokens: &[u32],
        scales: Option<&UnitScales<T>>,
        scope: LossScope,
        track: Track,
        hooks: Hooks<'t, T>,
    ) -> Result<Trace<'t, T>> {
        let ids = self.check_tokens(tokens)?;
        if let Some(s) = scales {
            s.validate(&self.config)?;
        }
        let cfg = &self.config;
        let (s, e, h, dh) = (ids.len(), cfg.embed_dim, cfg.heads_per_layer, cfg.head_dim);
        let all = track == Track::Everything;
        let mut params = Vec::new();
        let mut leaf = |p: &Param<T>, grad: bool| -> Result<Tensor<'t, T>> {
            let t = tape.leaf(Arc::clone(&p.data), &p.shape, grad)?;
            if all {
                params.push(t);
            }
            Ok(t)
        };

        let tok = leaf(&self.tok_emb, all)?;
        let pos = leaf(&self.pos_emb, all)?;
        let positions: Vec<usize> = (0..s).collect();
        let mut x = tok.embedding(&ids)?.add(pos.embedding(&positions)?)?;
        let embeddings = x;
        let eps = T::from_f64_lossy(LN_EPS);
        let inv_sqrt = T::one() / T::from_usize(dh).unwrap().sqrt();
        let one = T::one();

        let mut head_offsets = hooks.head_offsets.map(|v| v.into_iter());
        let mut up_hooks = hooks.up_weights.map(|v| v.into_iter());
        let (mut head_acts, mut neuron_acts, mut ups, mut attn_outs, mut hidden) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());

        for (l, w) in self.layers.iter().enumerate() {
            let g1 = leaf(&w.ln1_gamma, all)?;
            let b1 = leaf(&w.ln1_beta, all)?;
            let wq = leaf(&w.wq, all)?;
            let wk = leaf(&w.wk, all)?;
            let wv = leaf(&w.wv, all)?;
            let wo = leaf(&w.wo, all)?;
            let g2 = leaf(&w.ln2_gamma, all)?;
            let b2 = leaf(&w.ln2_beta, all)?;
            let up_own = leaf(&w.w_up, all || (track == Track::Units && up_hooks.is_none()))?;
            let down = leaf(&w.w_down, all)?;
            let up = match up_hooks.as_mut().and_then(|it| it.next()) {
                Some(t) => t,
                None => up_own,
            };

            let xn = x.layer_norm(g1, b1, eps)?;
            let q = xn.matmul(wq)?;
            let k = xn.matmul(wk)?;
            let v = xn.matmul(wv)?;
            let mut heads = Vec::with_capacity(h);
            for head in 0..h {
                let qh = q.slice_cols(head * dh, dh)?;
                let kh = k.slice_cols(head * dh, dh)?;
                let vh = v.slice_cols(head * dh, dh)?;
                let att = qh.matmul_nt(kh)?.scale(inv_sqrt)?.causal_softmax_rows()?;
                heads.push(att.matmul(vh)?);
            }
            let mut a = Tensor::concat_cols(&heads)?;
            match head_offsets.as_mut().and_then(|it| it.next()) {
                Some(off) => a = a.add(off)?,
                None if track == Track::Units => a = a.add(tape.zeros(&[s, e], true)?)?,
                None => {}
            }
            head_acts.push(a);
            if let Some(sc) = scales.map(|sc| &sc.heads[l]).filter(|sc| sc.iter().any(|&g| g != one)) {
                let gate: Vec<T> = sc.iter().flat_map(|&g| std::iter::repeat_n(g, dh)).collect();
                a = a.mul(tape.constant(gate, &[e])?)?;
            }
            let attn = a.matmul(wo)?;
            attn_outs.push(attn);
            x = x.add(attn)?;

            let xn = x.layer_norm(g2, b2, eps)?;
            let mut act = xn.matmul_nt(up)?.relu()?;
            neuron_acts.push(act);
            ups.push(up);
            if let Some(sc) = scales.map(|sc| &sc.neurons[l]).filter(|sc| sc.iter().any(|&g| g != one)) {
                act = act.mul(tape.constant(sc.clone(), &[cfg.ffn_dim])?)?;
            }
            x = x.add(act.matmul(down)?)?;
            hidden.push(x);
        }

        let gf = leaf(&self.lnf_gamma, all)?;
        let bf = leaf(&self.lnf_beta, all)?;
        let logits = x.layer_norm(gf, bf, eps)?.matmul_nt(tok)?;
        let loss = match Self::loss_weights(s, scope)? {
            Some(weights) => {
                let targets: Vec<usize> = ids[1..].to_vec();
                let v = cfg.vocab_size;
                Some(logits.view(0, &[s - 1, v])?.cross_entropy_weighted(&targets, &weights)?)
            }
            None => None,
        };
        Ok(Trace {
            logits,
            loss,
            embeddings,
            head_acts,
            neuron_acts,
            up: ups,
            attn_out: attn_outs,
            hidden,
            params,
        })
    }

    fn run(&self, tokens: &[u32], scales: Option<&UnitScales<T>>, opts: &ForwardOptions) -> Result<ForwardOutput<T>> {
        let tape = Tape::new();
        let track = match opts.capture {
            Capture::ActivationsAndGrads => Track::Units,
            _ => Track::Nothing,
        };
        let trace = self.trace(&tape, tokens, scales, opts.loss_scope, track, Hooks::default())?;
        let loss = trace.loss.map(|l| l.item()).transpose()?;
        let capture = match opts.capture {
            Capture::None => None,
            Capture::Activations => Some(self.collect(&trace, false)),
            Capture::ActivationsAndGrads => {
                let l = trace.loss.ok_or(Error::MissingCapture("loss needs at least two tokens"))?;
                l.backward()?;
                Some(self.collect(&trace, true))
            }
        };
        Ok(ForwardOutput {
            logits: trace.logits.to_vec(),
            seq_len: tokens.len(),
            loss,
            capture,
        })
    }

    fn collect(&self, trace: &Trace<'_, T>, grads: bool) -> UnitCapture<T> {
        let vals = |v: &[Tensor<'_, T>]| v.iter().map(|t| t.to_vec()).collect::<Vec<_>>();
        let grad_of = |t: &Tensor<'_, T>| t.grad().unwrap_or_else(|| vec![T::zero(); t.numel()]);
        UnitCapture {
            config: self.config.clone(),
            seq_len: trace.embeddings.shape()[0],
            head_acts: vals(&trace.head_acts),
            head_grads: grads.then(|| trace.head_acts.iter().map(grad_of).collect()),
            neuron_acts: vals(&trace.neuron_acts),
            up_weights: self.layers.iter().map(|w| Arc::clone(&w.w_up.data)).collect(),
            up_grads: grads.then(|| trace.up.iter().map(grad_of).collect()),
            attn_out: vals(&trace.attn_out),
            hidden: vals(&trace.hidden),
            embeddings: trace.embeddings.to_vec(),
        }
    }

    /// Runs the model on `tokens` (at most `max_seq_len` of them). Masked
    /// heads have their output slice zeroed before the output projection;
    /// masked neurons have their hidden activation zeroed.
    pub fn forward(&self, tokens: &[u32], opts: &ForwardOptions) -> Result<ForwardOutput<T>> {
        let scales = match opts.mask {
            Some(m) => {
                m.validate(&self.config)?;
                Some(UnitScales::from_mask(m))
            }
            None => None,
        };
        self.run(tokens, scales.as_ref(), opts)
    }

    /// Like [`forward`](Self::forward) with arbitrary per-unit gate values.
    pub fn forward_scaled(&self, tokens: &[u32], scales: &UnitScales<T>, opts: &ForwardOptions) -> Result<ForwardOutput<T>> {
        self.run(tokens, Some(scales), opts)
    }

    /// Mean next-token loss over the sequence.
    pub fn loss(&self, tokens: &[u32], mask: Option<&MaskSet>, scope: LossScope) -> Result<T> {
        let opts = ForwardOptions {
            mask,
            capture: Capture::None,
            loss_scope: scope,
        };
        self.forward(tokens, &opts)?
            .loss
            .ok_or(Error::Domain {
                op: "loss",
                detail: "need at least two tokens".into(),
            })
    }

    pub fn scaled_loss(&self, tokens: &[u32], scales: &UnitScales<T>, scope: LossScope) -> Result<T> {
        let opts = ForwardOptions {
            loss_scope: scope,
            ..Default::default()
        };
        self.forward_scaled(tokens, scales, &opts)?
            .loss
            .ok_or(Error::Domain {
                op: "loss",
                detail: "need at least two tokens".into(),
            })
    }

    /// Summed next-token NLL (in f64) and the number of predicted tokens.
    pub fn nll_sum(&self, tokens: &[u32], mask: Option<&MaskSet>) -> Result<(f64, usize)> {
        let loss = self.loss(tokens, mask, LossScope::Full)?;
        let n = tokens.len() - 1;
        Ok((loss.as_f64() * n as f64, n))
    }

    /// Loss and gradient of every parameter, in [`params`](Self::params) order.
    pub fn loss_and_grads(&self, tokens: &[u32]) -> Result<(T, Vec<Vec<T>>)> {
        let tape = Tape::new();
        let trace = self.trace(&tape, tokens, None, LossScope::Full, Track::Everything, Hooks::default())?;
        let loss = trace.loss.ok_or(Error::Domain {
            op: "loss_and_grads",
            detail: "need at least two tokens".into(),
        })?;
        loss.backward()?;
        let grads = trace
            .params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]))
            .collect();
        Ok((loss.item()?, grads))
    }
}
