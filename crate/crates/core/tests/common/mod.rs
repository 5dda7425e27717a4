//! Test fixtures shared by the core integration tests and the acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shlm_core::tensor::{Tape, Tensor};
use shlm_core::Result;

pub type LossFn = Box<dyn for<'t> Fn(&'t Tape<f64>, Tensor<'t, f64>) -> Result<Tensor<'t, f64>>>;

fn boxed<F>(f: F) -> LossFn
where
    F: for<'t> Fn(&'t Tape<f64>, Tensor<'t, f64>) -> Result<Tensor<'t, f64>> + 'static,
{
    Box::new(f)
}

/// One differentiable op under test: `loss` reduces the op's output to a
/// scalar with fixed random weights so every output element matters.
pub struct OpCase {
    pub name: &'static str,
    pub point: Vec<f64>,
    pub shape: Vec<usize>,
    pub loss: LossFn,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero, so relu is never probed at its kink.
fn off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn weighted<'t>(tape: &'t Tape<f64>, t: Tensor<'t, f64>, weights: &[f64]) -> Result<Tensor<'t, f64>> {
    let w = tape.constant(weights[..t.numel()].to_vec(), &t.shape())?;
    t.mul(w)?.sum()
}

/// Every public differentiable op, with inputs drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(&mut rng, 64, -1.0, 1.0);
    let mut cases = Vec::new();
    let mut add = |name, point: Vec<f64>, shape: &[usize], loss: LossFn| {
        cases.push(OpCase {
            name,
            point,
            shape: shape.to_vec(),
            loss,
        })
    };
    macro_rules! reduce {
        ($body:expr) => {{
            let w = w.clone();
            boxed(move |tape, x| {
                let f: &dyn Fn(Tensor<'_, f64>) -> Result<Tensor<'_, f64>> = &$body;
                weighted(tape, f(x)?, &w)
            })
        }};
    }

    add("matmul", uniform(&mut rng, 20, -1.0, 1.0), &[20], reduce!(|x| x.view(0, &[3, 4])?.matmul(x.view(12, &[4, 2])?)));
    add("matmul_nt", uniform(&mut rng, 20, -1.0, 1.0), &[20], reduce!(|x| x.view(0, &[3, 4])?.matmul_nt(x.view(12, &[2, 4])?)));
    add("add", uniform(&mut rng, 24, -1.0, 1.0), &[24], reduce!(|x| x.view(0, &[3, 4])?.add(x.view(12, &[3, 4])?)));
    add("add_rows", uniform(&mut rng, 16, -1.0, 1.0), &[16], reduce!(|x| x.view(0, &[3, 4])?.add(x.view(12, &[4])?)));
    add("sub", uniform(&mut rng, 24, -1.0, 1.0), &[24], reduce!(|x| x.view(0, &[3, 4])?.sub(x.view(12, &[3, 4])?)));
    add("sub_rows", uniform(&mut rng, 16, -1.0, 1.0), &[16], reduce!(|x| x.view(0, &[3, 4])?.sub(x.view(12, &[4])?)));
    add("mul", uniform(&mut rng, 24, -1.0, 1.0), &[24], reduce!(|x| x.view(0, &[3, 4])?.mul(x.view(12, &[3, 4])?)));
    add("mul_rows", uniform(&mut rng, 16, -1.0, 1.0), &[16], reduce!(|x| x.view(0, &[3, 4])?.mul(x.view(12, &[4])?)));
    add("relu", off_kink(&mut rng, 12), &[3, 4], reduce!(|x| x.relu()));
    add("square", uniform(&mut rng, 12, -2.0, 2.0), &[3, 4], reduce!(|x| x.square()));
    add("log", uniform(&mut rng, 12, 0.5, 2.0), &[3, 4], reduce!(|x| x.log()));
    add("scale", uniform(&mut rng, 12, -1.0, 1.0), &[3, 4], reduce!(|x| x.scale(1.7)));
    add("sum", uniform(&mut rng, 12, -1.0, 1.0), &[3, 4], reduce!(|x| x.square()?.sum()));
    add("mean", uniform(&mut rng, 12, -1.0, 1.0), &[3, 4], reduce!(|x| x.square()?.mean()));
    add("mean_rows", uniform(&mut rng, 12, -1.0, 1.0), &[3, 4], reduce!(|x| x.mean_rows()));
    add("softmax_rows", uniform(&mut rng, 15, -2.0, 2.0), &[3, 5], reduce!(|x| x.softmax_rows()));
    add("causal_softmax_rows", uniform(&mut rng, 16, -2.0, 2.0), &[4, 4], reduce!(|x| x.causal_softmax_rows()));
    add(
        "layer_norm",
        uniform(&mut rng, 25, -1.0, 1.0),
        &[25],
        reduce!(|x| x.view(0, &[3, 5])?.layer_norm(x.view(15, &[5])?, x.view(20, &[5])?, 1e-5)),
    );
    add("embedding", uniform(&mut rng, 18, -1.0, 1.0), &[6, 3], reduce!(|x| x.embedding(&[0, 2, 2, 5])));
    add("cross_entropy", uniform(&mut rng, 15, -2.0, 2.0), &[3, 5], reduce!(|x| x.cross_entropy(&[1, 4, 0])));
    add(
        "cross_entropy_weighted",
        uniform(&mut rng, 15, -2.0, 2.0),
        &[3, 5],
        reduce!(|x| x.cross_entropy_weighted(&[2, 2, 3], &[0.0, 0.7, 1.3])),
    );
    add("slice_cols", uniform(&mut rng, 12, -1.0, 1.0), &[3, 4], reduce!(|x| x.slice_cols(1, 2)));
    add(
        "concat_cols",
        uniform(&mut rng, 15, -1.0, 1.0),
        &[15],
        reduce!(|x| Tensor::concat_cols(&[x.view(0, &[3, 2])?, x.view(6, &[3, 3])?])),
    );
    add("view", uniform(&mut rng, 12, -1.0, 1.0), &[12], reduce!(|x| x.view(2, &[2, 5])));
    cases
}

/// Random symmetric `n × n` matrix and direction.
pub fn random_quadratic(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&mut rng, n * n, -1.0, 1.0);
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            q[i * n + j] = a[i * n + j] + a[j * n + i];
        }
    }
    let point = uniform(&mut rng, n, -1.0, 1.0);
    let dir = uniform(&mut rng, n, -1.0, 1.0);
    (q, point, dir)
}

/// `½ xᵀQx` as a tape loss.
pub fn quadratic_loss(q: Vec<f64>, n: usize) -> LossFn {
    boxed(move |tape, x| {
        let qm = tape.constant(q.clone(), &[n, n])?;
        let xr = x.view(0, &[1, n])?;
        xr.matmul_nt(qm)?.mul(xr)?.sum()?.scale(0.5)
    })
}

/// Relative error of a finite-difference HVP against the exact `Q·v`.
pub fn hvp_rel_error(seed: u64, n: usize) -> Result<f64> {
    let (q, point, dir) = random_quadratic(seed, n);
    let loss = quadratic_loss(q.clone(), n);
    let hv = shlm_core::tensor::hessian_vector_product(|t, x| loss(t, x), &point, &[n], &dir, 1e-4)?;
    let qv: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[i * n + j] * dir[j]).sum()).collect();
    let err: f64 = hv.iter().zip(&qv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = qv.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(err / norm)
}

fn layer_norm_rows(x: &[f64], n: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    x.chunks(n)
        .flat_map(|row| {
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + 1e-5).sqrt();
            row.iter().enumerate().map(move |(j, v)| (v - mu) * r * gamma[j] + beta[j]).collect::<Vec<_>>()
        })
        .collect()
}

/// `[m, k] · [k, n]` with plain loops.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            for j in 0..n {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

/// `[m, k] · [n, k]ᵀ`.
fn matmul_t(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[j * k + p]).sum();
        }
    }
    out
}

/// Loop-level forward pass written straight from the weights, independent of
/// the tape. With `drop_head = Some((layer, head))` that head's contribution
/// `out_h · W_o[rows of h]` is subtracted from the attention output.
pub fn reference_logits(
    model: &shlm_core::model::TransformerModel<f64>,
    tokens: &[u32],
    drop_head: Option<(usize, usize)>,
) -> Vec<f64> {
    let cfg = model.config();
    let (s, e, h, dh, f, v) = (tokens.len(), cfg.embed_dim, cfg.heads_per_layer, cfg.head_dim, cfg.ffn_dim, cfg.vocab_size);
    let mut x = vec![0.0; s * e];
    for (i, &t) in tokens.iter().enumerate() {
        for j in 0..e {
            x[i * e + j] = model.tok_emb.data[t as usize * e + j] + model.pos_emb.data[i * e + j];
        }
    }
    for (l, w) in model.layers.iter().enumerate() {
        let xn = layer_norm_rows(&x, e, &w.ln1_gamma.data, &w.ln1_beta.data);
        let q = matmul(&xn, &w.wq.data, s, e, e);
        let k = matmul(&xn, &w.wk.data, s, e, e);
        let val = matmul(&xn, &w.wv.data, s, e, e);
        let mut heads = vec![0.0; s * e];
        for hd in 0..h {
            for i in 0..s {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| (0..dh).map(|d| q[i * e + hd * dh + d] * k[j * e + hd * dh + d]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|c| (c - max).exp()).sum();
                for (j, c) in scores.iter().enumerate() {
                    let p = (c - max).exp() / z;
                    for d in 0..dh {
                        heads[i * e + hd * dh + d] += p * val[j * e + hd * dh + d];
                    }
                }
            }
        }
        let mut attn = matmul(&heads, &w.wo.data, s, e, e);
        if let Some((_, dhd)) = drop_head.filter(|&(dl, _)| dl == l) {
            for i in 0..s {
                for j in 0..e {
                    let c: f64 = (0..dh).map(|d| heads[i * e + dhd * dh + d] * w.wo.data[(dhd * dh + d) * e + j]).sum();
                    attn[i * e + j] -= c;
                }
            }
        }
        for (xi, a) in x.iter_mut().zip(&attn) {
            *xi += a;
        }
        let xn = layer_norm_rows(&x, e, &w.ln2_gamma.data, &w.ln2_beta.data);
        let hidden: Vec<f64> = matmul_t(&xn, &w.w_up.data, s, e, f).into_iter().map(|a| a.max(0.0)).collect();
        let down = matmul(&hidden, &w.w_down.data, s, f, e);
        for (xi, d) in x.iter_mut().zip(&down) {
            *xi += d;
        }
    }
    let xn = layer_norm_rows(&x, e, &model.lnf_gamma.data, &model.lnf_beta.data);
    matmul_t(&xn, &model.tok_emb.data, s, e, v)
}

/// Model with every weight drawn at a larger scale than the default
/// initialization, so each unit contributes visibly to the logits.
pub fn spread_model(cfg: shlm_core::model::ModelConfig, seed: u64) -> shlm_core::model::TransformerModel<f64> {
    let mut m = shlm_core::model::TransformerModel::<f64>::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, p) in m.params_mut() {
        let n = p.data.len();
        p.data = std::sync::Arc::new(uniform(&mut rng, n, -0.5, 0.5));
    }
    m
}
