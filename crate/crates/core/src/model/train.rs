use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TransformerModel;
use crate::error::{Error, Result};
use crate::optim::{clip_grad_norm, cosine_lr, AdamW};
use crate::tensor::Float;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Window length in tokens; capped at the model's `max_seq_len`.
    pub seq_len: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 3e-3,
            batch_size: 8,
            seq_len: 64,
            weight_decay: 0.01,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean batch loss at every step, before the update.
    pub step_losses: Vec<f64>,
}

impl TrainingLog {
    /// Mean loss over consecutive blocks of `epoch_len` steps (a trailing
    /// partial block is dropped).
    pub fn epoch_means(&self, epoch_len: usize) -> Vec<f64> {
        if epoch_len == 0 {
            return Vec::new();
        }
        self.step_losses
            .chunks_exact(epoch_len)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.step_losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.step_losses.last().copied()
    }
}

/// Next-token training on random windows of `corpus`.
///
/// Per-window gradients are computed in parallel and summed in window
/// order, so the result does not depend on the thread count.
pub fn train_lm<T: Float>(model: &mut TransformerModel<T>, corpus: &[u32], cfg: &TrainConfig) -> Result<TrainingLog> {
    if corpus.len() < 2 {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let window = cfg.seq_len.min(model.config().max_seq_len).min(corpus.len()).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes: Vec<usize> = model.params().iter().map(|(_, p)| p.numel()).collect();
    let mut opt = AdamW::<T>::new(&sizes, cfg.weight_decay);
    let warmup = (cfg.steps / 10).min(20);
    let mut log = TrainingLog::default();
    let inv_batch = T::one() / T::from_usize(cfg.batch_size).unwrap();

    for step in 0..cfg.steps {
        let starts: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..=corpus.len() - window))
            .collect();
        let frozen: &TransformerModel<T> = model;
        let results = starts
            .par_iter()
            .map(|&s| frozen.loss_and_grads(&corpus[s..s + window]))
            .collect::<Result<Vec<_>>>()?;
        let mut total_loss = 0.0;
        let mut grads: Vec<Vec<T>> = sizes.iter().map(|&n| vec![T::zero(); n]).collect();
        for (loss, g) in results {
            total_loss += loss.as_f64();
            for (acc, gi) in grads.iter_mut().zip(g) {
                acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
            }
        }
        grads.iter_mut().flatten().for_each(|g| *g *= inv_batch);
        log.step_losses.push(total_loss / cfg.batch_size as f64);
        clip_grad_norm(&mut grads, cfg.grad_clip);

        let lr = if step < warmup {
            cfg.lr * (step + 1) as f64 / warmup as f64
        } else {
            cosine_lr(cfg.lr, 0.1 * cfg.lr, step - warmup, cfg.steps - warmup)
        };
        let mut params = model.params_mut();
        let mut buffers: Vec<&mut Vec<T>> = params.iter_mut().map(|(_, p)| Arc::make_mut(&mut p.data)).collect();
        opt.step(&mut buffers, &grads, lr);
        if step % 50 == 0 {
            log::debug!("step {step}: loss {:.4}", log.step_losses[step]);
        }
    }
    Ok(log)
}
