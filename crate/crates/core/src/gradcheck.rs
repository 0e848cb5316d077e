//! Central-difference gradient checking.
//!
//! The numeric side only evaluates the forward pass on fresh tapes, so it
//! shares nothing with the adjoint rules it validates.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

/// Max over checked coordinates of `|analytic − numeric| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&Var<'t>) -> Result<Var<'t>>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    finite_difference_check_at(f, x, eps, &all)
}

/// As [`finite_difference_check`], restricted to the flat indices `coords`.
pub fn finite_difference_check_at<F>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: for<'t> Fn(&Var<'t>) -> Result<Var<'t>>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if x.dtype() != DType::F64 {
        return Err(Error::invalid("gradient checks require an f64 input"));
    }
    if let Some(&bad) = coords.iter().find(|&&c| c >= x.numel()) {
        return Err(Error::invalid(format!("coordinate {bad} out of range")));
    }

    let analytic = {
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let y = f(&xv)?;
        if y.value().numel() != 1 {
            return Err(Error::NonScalarLoss(y.shape().to_vec()));
        }
        match y.node() {
            Some(_) => tape
                .backward(&y)?
                .get(&xv)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape(), DType::F64)),
            // output does not depend on x at all
            None => Tensor::zeros(x.shape(), DType::F64),
        }
    };

    let eval = |data: Vec<f64>| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.constant(Tensor::new(x.shape(), data, DType::F64)?);
        f(&xv)?.value().item()
    };

    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut plus = x.to_vec();
        plus[i] += eps;
        let mut minus = x.to_vec();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if !err.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
