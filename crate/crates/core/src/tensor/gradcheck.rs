use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Coordinates that were probed, in order.
    pub coords: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|a - n| / max(|a|, |n|, REL_FLOOR)` per probed coordinate.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn evaluate<F>(f: &F, point: Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(point);
    let y = f(&mut tape, x)?;
    let v = tape.value(y);
    if v.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("f = {v}")));
    }
    Ok(v)
}

/// Compares the tape gradient of scalar `f` at `point` against central
/// differences with step `h`, over every coordinate.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    grad_check_coords(f, point, h, tol, &coords)
}

/// As [`grad_check`], restricted to the listed coordinates.
pub fn grad_check_coords<F>(
    f: F,
    point: &Tensor,
    h: f64,
    tol: f64,
    coords: &[usize],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&mut tape, x)?;
    if !tape.value(y).item().is_finite() {
        return Err(Error::Evaluation(format!("f = {}", tape.value(y).item())));
    }
    let grads = tape.backward(y)?;
    let full = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut rel_errors = Vec::with_capacity(coords.len());
    for &i in coords {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let fd = (evaluate(&f, plus)? - evaluate(&f, minus)?) / (2.0 * h);
        let a = full.data()[i];
        let denom = a.abs().max(fd.abs()).max(REL_FLOOR);
        analytic.push(a);
        numeric.push(fd);
        rel_errors.push((a - fd).abs() / denom);
    }
    let max_rel_error = rel_errors.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        coords: coords.to_vec(),
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        passed: max_rel_error <= tol,
    })
}
