//! Batch-level criteria built from per-example gradient vectors.
//!
//! A head's gradient vector is `∂L/∂A` of its slice summed over positions
//! (length `head_dim`); a neuron's is the gradient of its up-projection row
//! (length `embed_dim`).

use nalgebra::{DMatrix, SymmetricEigen};

use super::contextual::Units;
use super::{CriterionKind, ScoreVector};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, UnitCapture};

/// Eigenvalue regularizer of the jacov score.
pub const JACOV_K: f64 = 1e-5;

/// Gradient vector of every unit, canonical order.
pub fn unit_gradient_vectors(cap: &UnitCapture<f64>) -> Result<Vec<Vec<f64>>> {
    let c = &cap.config;
    let u = Units::new(cap);
    let mut out = Vec::with_capacity(c.num_units());
    for l in 0..c.num_layers {
        for k in 0..c.heads_per_layer {
            let g = u.head_grad(l, k)?;
            let mut v = vec![0.0; c.head_dim];
            for row in g.chunks_exact(c.head_dim) {
                v.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            out.push(v);
        }
    }
    for l in 0..c.num_layers {
        for k in 0..c.ffn_dim {
            out.push(u.neuron_weight_grad(l, k)?.to_vec());
        }
    }
    Ok(out)
}

/// Pearson correlation matrix between rows. A constant row correlates 0
/// with every other row and 1 with itself.
pub fn correlation_matrix(rows: &[&[f64]]) -> DMatrix<f64> {
    let b = rows.len();
    let centered: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .map(|r| {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let c: Vec<f64> = r.iter().map(|x| x - mean).collect();
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    let mut m = DMatrix::<f64>::identity(b, b);
    for i in 0..b {
        for j in i + 1..b {
            let (ci, ni) = &centered[i];
            let (cj, nj) = &centered[j];
            let r = if *ni > 0.0 && *nj > 0.0 {
                (ci.iter().zip(cj).map(|(x, y)| x * y).sum::<f64>() / (ni * nj)).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    m
}

/// `−Σ_i [log(λ_i + k) + 1/(λ_i + k)]` over eigenvalues of `corr`.
pub fn jacov_from_correlation(corr: DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(corr);
    -eig
        .eigenvalues
        .iter()
        .map(|&l| {
            let l = l.max(0.0) + JACOV_K;
            l.ln() + 1.0 / l
        })
        .sum::<f64>()
}

fn check_batch(per_example: &[Vec<Vec<f64>>], cfg: &ModelConfig) -> Result<()> {
    if per_example.len() < 2 {
        return Err(Error::BatchTooSmall {
            got: per_example.len(),
            need: 2,
        });
    }
    for ex in per_example {
        if ex.len() != cfg.num_units() {
            return Err(Error::LengthMismatch(ex.len(), cfg.num_units()));
        }
    }
    Ok(())
}

/// Jacobian-covariance score from per-example gradient vectors
/// (`examples × units × dim`).
pub fn score_jacov_aggregate(per_example: &[Vec<Vec<f64>>], cfg: &ModelConfig) -> Result<ScoreVector> {
    check_batch(per_example, cfg)?;
    let values = (0..cfg.num_units())
        .map(|u| {
            let rows: Vec<&[f64]> = per_example.iter().map(|ex| ex[u].as_slice()).collect();
            jacov_from_correlation(correlation_matrix(&rows))
        })
        .collect();
    Ok(ScoreVector::new(CriterionKind::Jacov, None, values, cfg))
}

/// Mean within-class minus mean across-class pairwise correlation, with
/// next-token ids as classes. A unit with no within-class pair uses 0 for
/// the within-class mean.
pub fn score_epenas_aggregate(per_example: &[Vec<Vec<f64>>], labels: &[u32], cfg: &ModelConfig) -> Result<ScoreVector> {
    if labels.len() != per_example.len() {
        return Err(Error::LengthMismatch(labels.len(), per_example.len()));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::SingleClass);
    }
    check_batch(per_example, cfg)?;
    let b = labels.len();
    let values = (0..cfg.num_units())
        .map(|u| {
            let rows: Vec<&[f64]> = per_example.iter().map(|ex| ex[u].as_slice()).collect();
            let c = correlation_matrix(&rows);
            let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
            for i in 0..b {
                for j in i + 1..b {
                    if labels[i] == labels[j] {
                        within += c[(i, j)];
                        nw += 1;
                    } else {
                        across += c[(i, j)];
                        na += 1;
                    }
                }
            }
            let w = if nw > 0 { within / nw as f64 } else { 0.0 };
            w - across / na as f64
        })
        .collect();
    Ok(ScoreVector::new(CriterionKind::Epenas, None, values, cfg))
}
