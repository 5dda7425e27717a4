//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during one forward/backward episode.
//! [`Tensor`] is a cheap `Copy` handle into it. Node ids are assigned in
//! creation order, which is always a topological order of the graph, so
//! backward is a single reverse sweep.
//!
//! ```
//! use shlm_core::tensor::Tape;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
//! let loss = x.square().unwrap().sum().unwrap();
//! loss.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
//! ```

mod gradcheck;
mod hvp;
mod ops;
mod scalar;

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

pub use gradcheck::{check_gradient, GradCheck, GRADCHECK_FLOOR};
pub use hvp::{gradient, hessian_vector_product};
pub use ops::{elementwise, Elementwise};
pub use scalar::{DType, Float};

use crate::error::{Error, Result};

pub(crate) struct Node<T: Float> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Arc<Vec<T>>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<T>>,
}

/// Recorded operation plus whatever the backward rule needs.
pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize },
    MatMulNt { a: usize, b: usize },
    Add { a: usize, b: usize, rows: bool },
    Sub { a: usize, b: usize, rows: bool },
    Mul { a: usize, b: usize, rows: bool },
    Relu { a: usize },
    Square { a: usize },
    Log { a: usize },
    Scale { a: usize, factor: T },
    Sum { a: usize },
    Mean { a: usize },
    MeanRows { a: usize },
    Softmax { a: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, rstd: Vec<T> },
    Embedding { table: usize, ids: Vec<usize> },
    CrossEntropy { logits: usize, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T> },
    SliceCols { a: usize, start: usize },
    ConcatCols { parts: Vec<usize> },
    View { a: usize, offset: usize },
}

/// Recording of one forward pass.
pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input tensor. `data` may be shared with the caller
    /// (model weights are handed over as `Arc`s without copying).
    pub fn leaf(
        &self,
        data: impl Into<Arc<Vec<T>>>,
        shape: &[usize],
        requires_grad: bool,
    ) -> Result<Tensor<'_, T>> {
        let data = data.into();
        let numel: usize = shape.iter().product();
        if shape.contains(&0) || numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        ops::check_finite("leaf", &data)?;
        Ok(self.push(shape.to_vec(), data, Op::Leaf, requires_grad))
    }

    pub fn param(&self, data: impl Into<Arc<Vec<T>>>, shape: &[usize]) -> Result<Tensor<'_, T>> {
        self.leaf(data, shape, true)
    }

    pub fn constant(&self, data: impl Into<Arc<Vec<T>>>, shape: &[usize]) -> Result<Tensor<'_, T>> {
        self.leaf(data, shape, false)
    }

    pub fn zeros(&self, shape: &[usize], requires_grad: bool) -> Result<Tensor<'_, T>> {
        let numel = shape.iter().product();
        self.leaf(vec![T::zero(); numel], shape, requires_grad)
    }

    pub(crate) fn push(&self, shape: Vec<usize>, value: Arc<Vec<T>>, op: Op<T>, requires_grad: bool) -> Tensor<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Tensor { tape: self, id }
    }

    pub(crate) fn with_node<R>(&self, id: usize, f: impl FnOnce(&Node<T>) -> R) -> R {
        f(&self.nodes.borrow()[id])
    }

    /// Clears every stored gradient.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Backpropagates from a scalar `loss`. Gradients are added to whatever
    /// is already stored, so two calls without [`zero_grad`](Self::zero_grad)
    /// double every gradient.
    pub fn backward(&self, loss: Tensor<'_, T>) -> Result<()> {
        assert!(std::ptr::eq(loss.tape, self), "loss belongs to another tape");
        let fresh = {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if root.value.len() != 1 {
                return Err(Error::NotScalar(root.shape.clone()));
            }
            if !root.requires_grad {
                return Err(Error::EmptyTape);
            }
            let mut pending: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
            let mut done: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
            pending[loss.id] = Some(vec![T::one()]);
            for id in (0..=loss.id).rev() {
                let Some(g) = pending[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                ops::propagate(&nodes, node, &g, &mut pending)?;
                done[id] = Some(g);
            }
            done
        };
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in fresh.into_iter().enumerate() {
            let Some(g) = g else { continue };
            match &mut nodes[id].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t, T: Float> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<'t, T: Float> Tensor<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_node(self.id, |n| n.shape.clone())
    }

    pub fn numel(&self) -> usize {
        self.tape.with_node(self.id, |n| n.value.len())
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.with_node(self.id, |n| n.requires_grad)
    }

    pub fn value(&self) -> Arc<Vec<T>> {
        self.tape.with_node(self.id, |n| Arc::clone(&n.value))
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.value().as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        self.tape.with_node(self.id, |n| {
            if n.value.len() == 1 {
                Ok(n.value[0])
            } else {
                Err(Error::NotScalar(n.shape.clone()))
            }
        })
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.tape.with_node(self.id, |n| n.grad.clone())
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }
}

impl<T: Float> fmt::Debug for Tensor<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("dtype", &T::DTYPE)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(vec![0.5, -1.0, 2.0, 3.0], &[2, 2]).unwrap();
        x.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.square().unwrap().sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        tape.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::<f64>::new();
        let x = tape.param(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.backward(), Err(Error::NotScalar(_))));
    }

    #[test]
    fn backward_without_parameters_is_empty_tape() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.sum().unwrap();
        assert!(matches!(loss.backward(), Err(Error::EmptyTape)));
    }

    #[test]
    fn leaf_rejects_bad_shape_and_non_finite() {
        let tape = Tape::<f32>::new();
        assert!(matches!(
            tape.constant(vec![1.0; 5], &[2, 3]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            tape.constant(vec![f32::NAN], &[1]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn shared_subexpression_matches_unshared_expansion() {
        // f = (x*y) + (x*y)^2, once with a shared node, once rebuilt twice.
        let data_x = vec![0.3, -1.2, 2.0];
        let data_y = vec![1.5, 0.7, -0.4];

        let shared = Tape::<f64>::new();
        let x = shared.param(data_x.clone(), &[3]).unwrap();
        let y = shared.param(data_y.clone(), &[3]).unwrap();
        let p = x.mul(y).unwrap();
        let f = p.add(p.square().unwrap()).unwrap().sum().unwrap();
        f.backward().unwrap();

        let unshared = Tape::<f64>::new();
        let x2 = unshared.param(data_x, &[3]).unwrap();
        let y2 = unshared.param(data_y, &[3]).unwrap();
        let p1 = x2.mul(y2).unwrap();
        let p2 = x2.mul(y2).unwrap();
        let f2 = p1.add(p2.square().unwrap()).unwrap().sum().unwrap();
        f2.backward().unwrap();

        // Accumulation order differs between the two graphs.
        let close = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).all(|(p, q)| (p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        assert_eq!(f.item().unwrap(), f2.item().unwrap());
        assert!(close(x.grad().unwrap(), x2.grad().unwrap()));
        assert!(close(y.grad().unwrap(), y2.grad().unwrap()));
    }
}
