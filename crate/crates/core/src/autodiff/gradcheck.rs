use crate::error::Result;
use crate::scalar::Scalar;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Finite-difference step used by [`gradcheck`].
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `1e-5` and returns the worst relative error.
///
/// `f` receives a fresh tape and the probe leaf and must return a scalar node.
/// The relative error of one coordinate is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradcheck<T, F>(f: F, probe: &Tensor<T>) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let eval = |values: &[T]| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(probe.shape().to_vec(), values.to_vec())?;
        let out = f(&mut tape, x)?;
        Ok(tape.scalar(out).as_f64())
    };

    let mut tape = Tape::new();
    let x = tape.variable(probe.shape().to_vec(), probe.values().to_vec())?;
    let out = f(&mut tape, x)?;
    tape.backward(out)?;
    let analytic: Vec<f64> = match tape.grad(x) {
        Some(g) => g.iter().map(|v| v.as_f64()).collect(),
        None => vec![0.0; probe.len()],
    };

    let h = T::lit(GRADCHECK_STEP);
    let mut worst = 0.0_f64;
    let mut buf = probe.values().to_vec();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = buf[i];
        buf[i] = orig + h;
        let up = eval(&buf)?;
        buf[i] = orig - h;
        let down = eval(&buf)?;
        buf[i] = orig;
        let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
