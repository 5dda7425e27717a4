//! AdamW with decoupled weight decay, and the learning-rate schedules used
//! by the language-model and predictor training loops.

use std::f64::consts::PI;

use crate::tensor::Float;

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Float> AdamW<T> {
    pub fn new(sizes: &[usize], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update of every parameter buffer with its gradient.
    pub fn step(&mut self, params: &mut [&mut Vec<T>], grads: &[Vec<T>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let c = |x: f64| T::from_f64_lossy(x);
        let (b1, b2, eps) = (c(self.beta1), c(self.beta2), c(self.eps));
        let (one_b1, one_b2) = (c(1.0 - self.beta1), c(1.0 - self.beta2));
        let step_size = c(lr / bc1);
        let inv_sqrt_bc2 = c(1.0 / bc2.sqrt());
        let decay = c(1.0 - lr * self.weight_decay);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let denom = v[i].sqrt() * inv_sqrt_bc2 + eps;
                p[i] = p[i] * decay - step_size * m[i] / denom;
            }
        }
    }
}

/// Cosine annealing from `base` at `t = 0` to `floor` at `t = total`.
pub fn cosine_lr(base: f64, floor: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = (t.min(total) as f64) / total as f64;
    floor + 0.5 * (base - floor) * (1.0 + (PI * frac).cos())
}

/// Global L2 norm clipping; returns the norm before clipping.
pub fn clip_grad_norm<T: Float>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| {
            let x = g.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
