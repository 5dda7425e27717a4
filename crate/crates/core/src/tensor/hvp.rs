use super::{Float, Tape, Tensor};
use crate::error::{Error, Result};

/// Value and gradient of a scalar function at `point`.
///
/// `loss_fn` receives a fresh tape and the point as a gradient-tracking leaf
/// of shape `shape`, and must return a scalar built from it.
pub fn gradient<T, F>(loss_fn: &F, point: &[T], shape: &[usize]) -> Result<(T, Vec<T>)>
where
    T: Float,
    F: for<'t> Fn(&'t Tape<T>, Tensor<'t, T>) -> Result<Tensor<'t, T>>,
{
    let tape = Tape::new();
    let x = tape.param(point.to_vec(), shape)?;
    let loss = loss_fn(&tape, x)?;
    loss.backward()?;
    let value = loss.item()?;
    let grad = x.grad().unwrap_or_else(|| vec![T::zero(); point.len()]);
    Ok((value, grad))
}

/// Finite-difference Hessian-vector product.
///
/// Returns `[∇L(a + eps·v̂) − ∇L(a)] · ‖v‖ / eps` with `v̂ = v / ‖v‖`, an
/// estimate of `H·v` that needs only first-order tapes.
pub fn hessian_vector_product<T, F>(loss_fn: F, point: &[T], shape: &[usize], direction: &[T], eps: T) -> Result<Vec<T>>
where
    T: Float,
    F: for<'t> Fn(&'t Tape<T>, Tensor<'t, T>) -> Result<Tensor<'t, T>>,
{
    if direction.len() != point.len() {
        return Err(Error::LengthMismatch(direction.len(), point.len()));
    }
    if eps <= T::zero() {
        return Err(Error::Domain {
            op: "hessian_vector_product",
            detail: "eps must be positive".into(),
        });
    }
    let norm = direction.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm == T::zero() {
        return Err(Error::ZeroVector);
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite("hessian_vector_product"));
    }
    let shifted: Vec<T> = point
        .iter()
        .zip(direction)
        .map(|(&a, &v)| a + eps * v / norm)
        .collect();
    let (_, g0) = gradient(&loss_fn, point, shape)?;
    let (_, g1) = gradient(&loss_fn, &shifted, shape)?;
    let factor = norm / eps;
    let hv: Vec<T> = g1.iter().zip(&g0).map(|(&b, &a)| (b - a) * factor).collect();
    if hv.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("hessian_vector_product"));
    }
    Ok(hv)
}
