use super::{gradient, Tape, Tensor};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Coordinate where that error occurs.
    pub worst_index: usize,
}

/// Magnitude below which both gradients count as zero; keeps the ratio
/// meaningful where the true derivative vanishes.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Checks the tape gradient of a scalar `loss_fn` at `point` against
/// central differences with step `h`, coordinate by coordinate.
pub fn check_gradient<F>(loss_fn: &F, point: &[f64], shape: &[usize], h: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, Tensor<'t, f64>) -> Result<Tensor<'t, f64>>,
{
    if h <= 0.0 {
        return Err(Error::Domain {
            op: "check_gradient",
            detail: "step must be positive".into(),
        });
    }
    let (_, analytic) = gradient(loss_fn, point, shape)?;
    let value_at = |x: &[f64]| -> Result<f64> {
        let tape = Tape::new();
        let leaf = tape.constant(x.to_vec(), shape)?;
        loss_fn(&tape, leaf)?.item()
    };
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let up = value_at(&x)?;
        x[i] = point[i] - h;
        let down = value_at(&x)?;
        x[i] = point[i];
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        let rel = (analytic[i] - numeric).abs() / scale;
        if rel > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: rel,
                worst_index: i,
            };
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube<'t>(_: &'t Tape<f64>, x: Tensor<'t, f64>) -> Result<Tensor<'t, f64>> {
        x.square()?.mul(x)?.sum()
    }

    fn kink<'t>(_: &'t Tape<f64>, x: Tensor<'t, f64>) -> Result<Tensor<'t, f64>> {
        x.relu()?.sum()
    }

    #[test]
    fn cubic_passes_and_wrong_gradient_fails() {
        let ok = check_gradient(&cube, &[0.5, -1.5, 2.0], &[3], 1e-5).unwrap();
        assert!(ok.max_rel_error < 1e-8, "{ok:?}");
        // relu at a kink: tape says 0, central difference says 0.5.
        let bad = check_gradient(&kink, &[1.0, 0.0], &[2], 1e-5).unwrap();
        assert_eq!(bad.worst_index, 1);
        assert!(bad.max_rel_error > 0.4);
    }
}
