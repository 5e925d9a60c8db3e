use super::array::Array;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative error between an analytic and a numeric derivative. The
/// denominator is floored at 1e-3 so entries that are zero in both routes
/// compare absolutely instead of amplifying rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Compares the reverse-mode gradient of a scalar function at `x` with
/// central differences and returns the largest relative error.
///
/// `f` receives a fresh tape and the leaf holding `x`; it must return a
/// one-element node.
pub fn check_gradients<F>(f: F, x: &Array) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |point: &Array| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(point.clone());
        let out = f(&mut tape, leaf)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::Evaluation(format!(
                "function output has shape {:?}, expected a scalar",
                v.shape()
            )));
        }
        let v = v.data()[0];
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite function value {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf)?;
    let fx = tape.value(out).data()[0];
    if !fx.is_finite() {
        return Err(Error::Evaluation(format!("non-finite function value {fx}")));
    }
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Array::zeros(x.shape()));

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
