//! Central finite-difference verification of reverse-mode gradients.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, REL_ERROR_FLOOR)
}

pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Max relative error between the autodiff gradient of scalar `f` at
/// `point` and central differences `(f(x+h) - f(x-h)) / 2h`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        h,
    )
}

/// [`grad_check`] over several input tensors at once; the error is the
/// maximum over every coordinate of every input.
pub fn grad_check_many<F>(f: F, points: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.variable(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    let value = |pts: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };
    compare_gradients(value, &analytic, points, h)
}

/// Checks a supplied gradient against central differences of `value`.
pub fn compare_gradients<F>(
    value: F,
    analytic: &[Tensor<f64>],
    points: &[Tensor<f64>],
    h: f64,
) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    compare_gradients_floored(value, analytic, points, h, REL_ERROR_FLOOR)
}

/// [`compare_gradients`] with an explicit relative-error denominator floor.
/// Deep compositions need a larger one: coordinates whose gradient is
/// exactly zero still see rounding noise of order `ε·|f|/h`.
pub fn compare_gradients_floored<F>(
    value: F,
    analytic: &[Tensor<f64>],
    points: &[Tensor<f64>],
    h: f64,
    floor: f64,
) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    if analytic.len() != points.len() {
        return Err(Error::shape("one analytic gradient per input required"));
    }
    let mut work = points.to_vec();
    let mut worst = 0.0f64;
    for (t, grad) in analytic.iter().enumerate() {
        if grad.shape() != points[t].shape() {
            return Err(Error::shape(format!(
                "gradient shape {:?} vs input {:?}",
                grad.shape(),
                points[t].shape()
            )));
        }
        for i in 0..points[t].numel() {
            let x0 = points[t].data()[i];
            work[t].data_mut()[i] = x0 + h;
            let plus = value(&work)?;
            work[t].data_mut()[i] = x0 - h;
            let minus = value(&work)?;
            work[t].data_mut()[i] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error_floored(grad.data()[i], numeric, floor));
        }
    }
    Ok(worst)
}
