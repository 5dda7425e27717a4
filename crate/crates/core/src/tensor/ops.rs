use std::sync::Arc;

use super::{Float, Node, Op, Tensor};
use crate::error::{Error, Result};

pub(crate) fn check_finite<T: Float>(op: &'static str, values: &[T]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

/// Kinds accepted by [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise<T> {
    Relu,
    Mul,
    Add,
    Sub,
    Square,
    Log,
    Scale(T),
}

/// Applies an elementwise op. Binary kinds take two arguments, the rest one.
pub fn elementwise<'t, T: Float>(kind: Elementwise<T>, args: &[Tensor<'t, T>]) -> Result<Tensor<'t, T>> {
    let arity = match kind {
        Elementwise::Mul | Elementwise::Add | Elementwise::Sub => 2,
        _ => 1,
    };
    if args.len() != arity {
        return Err(Error::LengthMismatch(args.len(), arity));
    }
    match kind {
        Elementwise::Relu => args[0].relu(),
        Elementwise::Mul => args[0].mul(args[1]),
        Elementwise::Add => args[0].add(args[1]),
        Elementwise::Sub => args[0].sub(args[1]),
        Elementwise::Square => args[0].square(),
        Elementwise::Log => args[0].log(),
        Elementwise::Scale(c) => args[0].scale(c),
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [m, n] => Ok((m, n)),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![],
        }),
    }
}

impl<'t, T: Float> Tensor<'t, T> {
    fn same_tape(&self, other: &Tensor<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "tensors recorded on different tapes"
        );
    }

    fn finish(&self, op_name: &'static str, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Result<Tensor<'t, T>> {
        check_finite(op_name, &value)?;
        Ok(self.tape.push(shape, Arc::new(value), op, requires_grad))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(self, rhs: Tensor<'t, T>) -> Result<Tensor<'t, T>> {
        self.same_tape(&rhs);
        let (sa, a, ra) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (sb, b, rb) = self.tape.with_node(rhs.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (m, k) = dims2("matmul", &sa)?;
        let (k2, n) = dims2("matmul", &sb)?;
        if k != k2 {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), &a, (k as isize, 1), &b, (n as isize, 1), T::zero(), &mut out);
        self.finish("matmul", vec![m, n], out, Op::MatMul { a: self.id, b: rhs.id }, ra || rb)
    }

    /// `self · rhsᵀ` for `[m, k]` and `[n, k]`.
    pub fn matmul_nt(self, rhs: Tensor<'t, T>) -> Result<Tensor<'t, T>> {
        self.same_tape(&rhs);
        let (sa, a, ra) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (sb, b, rb) = self.tape.with_node(rhs.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (m, k) = dims2("matmul_nt", &sa)?;
        let (n, k2) = dims2("matmul_nt", &sb)?;
        if k != k2 {
            return Err(Error::ShapeMismatch { op: "matmul_nt", lhs: sa, rhs: sb });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), &a, (k as isize, 1), &b, (1, k as isize), T::zero(), &mut out);
        self.finish("matmul_nt", vec![m, n], out, Op::MatMulNt { a: self.id, b: rhs.id }, ra || rb)
    }

    fn binary(self, rhs: Tensor<'t, T>, kind: BinaryKind) -> Result<Tensor<'t, T>> {
        self.same_tape(&rhs);
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let (sa, a, ra) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (sb, b, rb) = self.tape.with_node(rhs.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        // Either identical shapes, or a row vector broadcast over the
        // leading dimension of a rank-2 lhs.
        let rows = if sa == sb {
            false
        } else if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            true
        } else {
            return Err(Error::ShapeMismatch { op: name, lhs: sa, rhs: sb });
        };
        let width = b.len();
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out: Vec<T> = a.iter().enumerate().map(|(i, &x)| f(x, b[i % width])).collect();
        let (a, b) = (self.id, rhs.id);
        let op = match kind {
            BinaryKind::Add => Op::Add { a, b, rows },
            BinaryKind::Sub => Op::Sub { a, b, rows },
            BinaryKind::Mul => Op::Mul { a, b, rows },
        };
        self.finish(name, sa, out, op, ra || rb)
    }

    pub fn add(self, rhs: Tensor<'t, T>) -> Result<Tensor<'t, T>> {
        self.binary(rhs, BinaryKind::Add)
    }

    pub fn sub(self, rhs: Tensor<'t, T>) -> Result<Tensor<'t, T>> {
        self.binary(rhs, BinaryKind::Sub)
    }

    pub fn mul(self, rhs: Tensor<'t, T>) -> Result<Tensor<'t, T>> {
        self.binary(rhs, BinaryKind::Mul)
    }

    fn unary(self, name: &'static str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Tensor<'t, T>> {
        let (shape, a, ra) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let out = a.iter().map(|&x| f(x)).collect();
        self.finish(name, shape, out, op, ra)
    }

    pub fn relu(self) -> Result<Tensor<'t, T>> {
        self.unary("relu", |x| if x > T::zero() { x } else { T::zero() }, Op::Relu { a: self.id })
    }

    pub fn square(self) -> Result<Tensor<'t, T>> {
        self.unary("square", |x| x * x, Op::Square { a: self.id })
    }

    pub fn log(self) -> Result<Tensor<'t, T>> {
        let bad = self.tape.with_node(self.id, |n| n.value.iter().position(|&x| x <= T::zero()));
        if let Some(i) = bad {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input at index {i}"),
            });
        }
        self.unary("log", |x| x.ln(), Op::Log { a: self.id })
    }

    pub fn scale(self, factor: T) -> Result<Tensor<'t, T>> {
        self.unary("scale", |x| x * factor, Op::Scale { a: self.id, factor })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Result<Tensor<'t, T>> {
        let (a, ra) = self.tape.with_node(self.id, |n| (n.value.clone(), n.requires_grad));
        let s = a.iter().copied().sum();
        self.finish("sum", vec![], vec![s], Op::Sum { a: self.id }, ra)
    }

    pub fn mean(self) -> Result<Tensor<'t, T>> {
        let (a, ra) = self.tape.with_node(self.id, |n| (n.value.clone(), n.requires_grad));
        let s: T = a.iter().copied().sum();
        let m = s / T::from_usize(a.len()).unwrap();
        self.finish("mean", vec![], vec![m], Op::Mean { a: self.id }, ra)
    }

    /// Column means of `[m, n]`, giving `[1, n]`.
    pub fn mean_rows(self) -> Result<Tensor<'t, T>> {
        let (shape, a, ra) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (m, n) = dims2("mean_rows", &shape)?;
        let mut out = vec![T::zero(); n];
        for row in a.chunks_exact(n) {
            out.iter_mut().zip(row).for_each(|(o, &x)| *o += x);
        }
        let inv = T::one() / T::from_usize(m).unwrap();
        out.iter_mut().for_each(|o| *o *= inv);
        self.finish("mean_rows", vec![1, n], out, Op::MeanRows { a: self.id }, ra)
    }

    fn softmax_impl(self, causal: bool) -> Result<Tensor<'t, T>> {
        let (shape, a, ra) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (m, n) = dims2("softmax_rows", &shape)?;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            // causal rows see columns 0..=i (aligned to the right edge when m < n)
            let visible = if causal { (i + 1 + n).saturating_sub(m).min(n) } else { n };
            let row = &a[i * n..i * n + visible];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let dst = &mut out[i * n..i * n + visible];
            let mut total = T::zero();
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - max).exp();
                total += *d;
            }
            let inv = T::one() / total;
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        self.finish("softmax_rows", shape, out, Op::Softmax { a: self.id }, ra)
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(self) -> Result<Tensor<'t, T>> {
        self.softmax_impl(false)
    }

    /// Row-wise softmax where row `i` only attends to columns `0..=i`.
    /// Masked entries are exactly zero.
    pub fn causal_softmax_rows(self) -> Result<Tensor<'t, T>> {
        self.softmax_impl(true)
    }

    /// Per-row layer normalization of `[m, n]` with affine `gamma`, `beta` of length `n`.
    pub fn layer_norm(self, gamma: Tensor<'t, T>, beta: Tensor<'t, T>, eps: T) -> Result<Tensor<'t, T>> {
        self.same_tape(&gamma);
        self.same_tape(&beta);
        let (shape, x, rx) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (sg, g, rg) = self.tape.with_node(gamma.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (sb, b, rb) = self.tape.with_node(beta.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (m, n) = dims2("layer_norm", &shape)?;
        if sg != [n] || sb != [n] {
            return Err(Error::ShapeMismatch { op: "layer_norm", lhs: shape, rhs: sg });
        }
        let nf = T::from_usize(n).unwrap();
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mu = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mu) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let requires_grad = rx || rg || rb;
        let (xhat, rstd) = if requires_grad { (xhat, rstd) } else { (vec![], vec![]) };
        let op = Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, rstd };
        self.finish("layer_norm", shape, out, op, requires_grad)
    }

    /// Gathers rows of a `[V, E]` table.
    pub fn embedding(self, ids: &[usize]) -> Result<Tensor<'t, T>> {
        let (shape, table, rt) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (v, e) = dims2("embedding", &shape)?;
        if ids.is_empty() {
            return Err(Error::ShapeMismatch { op: "embedding", lhs: shape, rhs: vec![0] });
        }
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::InvalidTokenId { id, vocab: v });
            }
            out.extend_from_slice(&table[id * e..(id + 1) * e]);
        }
        let op = Op::Embedding { table: self.id, ids: ids.to_vec() };
        self.finish("embedding", vec![ids.len(), e], out, op, rt)
    }

    /// Mean next-token negative log-likelihood of `[m, V]` logits.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Tensor<'t, T>> {
        let m = targets.len();
        let w = T::one() / T::from_usize(m.max(1)).unwrap();
        self.cross_entropy_weighted(targets, &vec![w; m])
    }

    /// `Σ_i w_i · NLL_i`. Used for target-only losses (zero weight on prompt
    /// positions).
    pub fn cross_entropy_weighted(self, targets: &[usize], weights: &[T]) -> Result<Tensor<'t, T>> {
        let (shape, logits, rl) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (m, v) = dims2("cross_entropy", &shape)?;
        if targets.len() != m || weights.len() != m {
            return Err(Error::ShapeMismatch { op: "cross_entropy", lhs: shape, rhs: vec![targets.len()] });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::InvalidTokenId { id: bad, vocab: v });
        }
        let mut probs = if rl { vec![T::zero(); m * v] } else { vec![] };
        let mut loss = T::zero();
        for i in 0..m {
            let row = &logits[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + total.ln();
            loss += weights[i] * (lse - row[targets[i]]);
            if rl {
                for (p, &x) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                    *p = (x - lse).exp();
                }
            }
        }
        let op = Op::CrossEntropy {
            logits: self.id,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
        };
        self.finish("cross_entropy", vec![], vec![loss], op, rl)
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Tensor<'t, T>> {
        let (shape, a, ra) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let (m, n) = dims2("slice_cols", &shape)?;
        if len == 0 || start + len > n {
            return Err(Error::ShapeMismatch { op: "slice_cols", lhs: shape, rhs: vec![start, len] });
        }
        let mut out = Vec::with_capacity(m * len);
        for row in a.chunks_exact(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        self.finish("slice_cols", vec![m, len], out, Op::SliceCols { a: self.id, start }, ra)
    }

    /// Side-by-side concatenation of rank-2 tensors with equal row counts.
    pub fn concat_cols(parts: &[Tensor<'t, T>]) -> Result<Tensor<'t, T>> {
        let first = parts.first().ok_or(Error::ShapeMismatch { op: "concat_cols", lhs: vec![], rhs: vec![] })?;
        let tape = first.tape;
        let mut rows = None;
        let mut blocks = Vec::with_capacity(parts.len());
        let mut requires_grad = false;
        for p in parts {
            first.same_tape(p);
            let (shape, v, r) = tape.with_node(p.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
            let (m, n) = dims2("concat_cols", &shape)?;
            if *rows.get_or_insert(m) != m {
                return Err(Error::ShapeMismatch { op: "concat_cols", lhs: vec![rows.unwrap()], rhs: shape });
            }
            requires_grad |= r;
            blocks.push((n, v));
        }
        let m = rows.unwrap();
        let width: usize = blocks.iter().map(|(n, _)| n).sum();
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            for (n, v) in &blocks {
                out.extend_from_slice(&v[i * n..(i + 1) * n]);
            }
        }
        let op = Op::ConcatCols { parts: parts.iter().map(|p| p.id).collect() };
        first.finish("concat_cols", vec![m, width], out, op, requires_grad)
    }

    /// Contiguous range of the flat buffer starting at `offset`, reshaped.
    pub fn view(self, offset: usize, shape: &[usize]) -> Result<Tensor<'t, T>> {
        let (src, a, ra) = self.tape.with_node(self.id, |n| (n.shape.clone(), n.value.clone(), n.requires_grad));
        let numel: usize = shape.iter().product();
        if numel == 0 || offset + numel > a.len() {
            return Err(Error::ShapeMismatch { op: "view", lhs: src, rhs: shape.to_vec() });
        }
        let out = a[offset..offset + numel].to_vec();
        self.finish("view", shape.to_vec(), out, Op::View { a: self.id, offset }, ra)
    }
}

fn acc<'g, T: Float>(pending: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], id: usize) -> Option<&'g mut Vec<T>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(pending[id].get_or_insert_with(|| vec![T::zero(); len]))
}

/// Pushes `g` (the gradient of `node`'s output) into its inputs.
pub(crate) fn propagate<T: Float>(nodes: &[Node<T>], node: &Node<T>, g: &[T], pending: &mut [Option<Vec<T>>]) -> Result<()> {
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul { a, b } => {
            let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
            let n = nodes[b].shape[1];
            let av = Arc::clone(&nodes[a].value);
            let bv = Arc::clone(&nodes[b].value);
            if let Some(ga) = acc(pending, nodes, a) {
                // dA = dC · Bᵀ
                T::gemm(m, n, k, T::one(), g, (n as isize, 1), &bv, (1, n as isize), T::one(), ga);
            }
            if let Some(gb) = acc(pending, nodes, b) {
                // dB = Aᵀ · dC
                T::gemm(k, m, n, T::one(), &av, (1, k as isize), g, (n as isize, 1), T::one(), gb);
            }
        }
        &Op::MatMulNt { a, b } => {
            let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
            let n = nodes[b].shape[0];
            let av = Arc::clone(&nodes[a].value);
            let bv = Arc::clone(&nodes[b].value);
            if let Some(ga) = acc(pending, nodes, a) {
                // dA = dC · B
                T::gemm(m, n, k, T::one(), g, (n as isize, 1), &bv, (k as isize, 1), T::one(), ga);
            }
            if let Some(gb) = acc(pending, nodes, b) {
                // dB = dCᵀ · A
                T::gemm(n, m, k, T::one(), g, (1, n as isize), &av, (k as isize, 1), T::one(), gb);
            }
        }
        &Op::Add { a, b, rows } | &Op::Sub { a, b, rows } => {
            let sign = if matches!(node.op, Op::Sub { .. }) { -T::one() } else { T::one() };
            if let Some(ga) = acc(pending, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d);
            }
            if let Some(gb) = acc(pending, nodes, b) {
                if rows {
                    let w = gb.len();
                    for chunk in g.chunks_exact(w) {
                        gb.iter_mut().zip(chunk).for_each(|(x, &d)| *x += sign * d);
                    }
                } else {
                    gb.iter_mut().zip(g).for_each(|(x, &d)| *x += sign * d);
                }
            }
        }
        &Op::Mul { a, b, rows } => {
            let av = Arc::clone(&nodes[a].value);
            let bv = Arc::clone(&nodes[b].value);
            let w = bv.len();
            if let Some(ga) = acc(pending, nodes, a) {
                for (i, (x, &d)) in ga.iter_mut().zip(g).enumerate() {
                    *x += d * bv[i % w];
                }
            }
            if let Some(gb) = acc(pending, nodes, b) {
                if rows {
                    for (i, &d) in g.iter().enumerate() {
                        gb[i % w] += d * av[i];
                    }
                } else {
                    for (i, (x, &d)) in gb.iter_mut().zip(g).enumerate() {
                        *x += d * av[i];
                    }
                }
            }
        }
        &Op::Relu { a } => {
            let av = Arc::clone(&nodes[a].value);
            if let Some(ga) = acc(pending, nodes, a) {
                for ((x, &d), &v) in ga.iter_mut().zip(g).zip(av.iter()) {
                    if v > T::zero() {
                        *x += d;
                    }
                }
            }
        }
        &Op::Square { a } => {
            let av = Arc::clone(&nodes[a].value);
            let two = T::one() + T::one();
            if let Some(ga) = acc(pending, nodes, a) {
                for ((x, &d), &v) in ga.iter_mut().zip(g).zip(av.iter()) {
                    *x += two * v * d;
                }
            }
        }
        &Op::Log { a } => {
            let av = Arc::clone(&nodes[a].value);
            if let Some(ga) = acc(pending, nodes, a) {
                for ((x, &d), &v) in ga.iter_mut().zip(g).zip(av.iter()) {
                    *x += d / v;
                }
            }
        }
        &Op::Scale { a, factor } => {
            if let Some(ga) = acc(pending, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(x, &d)| *x += factor * d);
            }
        }
        &Op::Sum { a } => {
            if let Some(ga) = acc(pending, nodes, a) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        &Op::Mean { a } => {
            if let Some(ga) = acc(pending, nodes, a) {
                let d = g[0] / T::from_usize(ga.len()).unwrap();
                ga.iter_mut().for_each(|x| *x += d);
            }
        }
        &Op::MeanRows { a } => {
            let m = nodes[a].shape[0];
            if let Some(ga) = acc(pending, nodes, a) {
                let inv = T::one() / T::from_usize(m).unwrap();
                let n = g.len();
                for row in ga.chunks_exact_mut(n) {
                    row.iter_mut().zip(g).for_each(|(x, &d)| *x += d * inv);
                }
            }
        }
        &Op::Softmax { a } => {
            let n = node.shape[1];
            let y = &node.value;
            if let Some(ga) = acc(pending, nodes, a) {
                for ((yr, gr), dst) in y.chunks_exact(n).zip(g.chunks_exact(n)).zip(ga.chunks_exact_mut(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &d)| p * d).sum();
                    for ((x, &p), &d) in dst.iter_mut().zip(yr).zip(gr) {
                        *x += p * (d - dot);
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let (x, gamma, beta) = (*x, *gamma, *beta);
            let n = node.shape[1];
            let gv = Arc::clone(&nodes[gamma].value);
            let nf = T::from_usize(n).unwrap();
            if let Some(gx) = acc(pending, nodes, x) {
                for (i, r) in rstd.iter().enumerate() {
                    let gr = &g[i * n..(i + 1) * n];
                    let hr = &xhat[i * n..(i + 1) * n];
                    let mut mean_d = T::zero();
                    let mut mean_dh = T::zero();
                    for j in 0..n {
                        let d = gr[j] * gv[j];
                        mean_d += d;
                        mean_dh += d * hr[j];
                    }
                    mean_d = mean_d / nf;
                    mean_dh = mean_dh / nf;
                    for j in 0..n {
                        let d = gr[j] * gv[j];
                        gx[i * n + j] += *r * (d - mean_d - hr[j] * mean_dh);
                    }
                }
            }
            if let Some(gg) = acc(pending, nodes, gamma) {
                for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                    for j in 0..n {
                        gg[j] += gr[j] * hr[j];
                    }
                }
            }
            if let Some(gb) = acc(pending, nodes, beta) {
                for gr in g.chunks_exact(n) {
                    gb.iter_mut().zip(gr).for_each(|(x, &d)| *x += d);
                }
            }
        }
        Op::Embedding { table, ids } => {
            let e = node.shape[1];
            if let Some(gt) = acc(pending, nodes, *table) {
                for (row, &id) in g.chunks_exact(e).zip(ids) {
                    gt[id * e..(id + 1) * e].iter_mut().zip(row).for_each(|(x, &d)| *x += d);
                }
            }
        }
        Op::CrossEntropy { logits, targets, weights, probs } => {
            let v = nodes[*logits].shape[1];
            if let Some(gl) = acc(pending, nodes, *logits) {
                for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let scale = g[0] * w;
                    let dst = &mut gl[i * v..(i + 1) * v];
                    for (x, &p) in dst.iter_mut().zip(&probs[i * v..(i + 1) * v]) {
                        *x += scale * p;
                    }
                    dst[t] -= scale;
                }
            }
        }
        &Op::SliceCols { a, start } => {
            let n = nodes[a].shape[1];
            let len = node.shape[1];
            if let Some(ga) = acc(pending, nodes, a) {
                for (dst, src) in ga.chunks_exact_mut(n).zip(g.chunks_exact(len)) {
                    dst[start..start + len].iter_mut().zip(src).for_each(|(x, &d)| *x += d);
                }
            }
        }
        Op::ConcatCols { parts } => {
            let width = node.shape[1];
            let mut col = 0;
            for &p in parts {
                let n = nodes[p].shape[1];
                if let Some(gp) = acc(pending, nodes, p) {
                    for (dst, src) in gp.chunks_exact_mut(n).zip(g.chunks_exact(width)) {
                        dst.iter_mut().zip(&src[col..col + n]).for_each(|(x, &d)| *x += d);
                    }
                }
                col += n;
            }
        }
        &Op::View { a, offset } => {
            if let Some(ga) = acc(pending, nodes, a) {
                ga[offset..offset + g.len()].iter_mut().zip(g).for_each(|(x, &d)| *x += d);
            }
        }
    }
    Ok(())
}
