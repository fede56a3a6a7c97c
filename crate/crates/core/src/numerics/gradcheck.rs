use super::Matrix;
use crate::error::{HainError, Result};

/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Central-difference gradient of a scalar function of a matrix.
pub fn central_difference(f: impl Fn(&Matrix) -> f64, at: &Matrix, h: f64) -> Result<Matrix> {
    if h.is_nan() || h <= 0.0 {
        return Err(HainError::contract(format!("step must be positive, got {h}")));
    }
    let mut probe = at.clone();
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    for i in 0..at.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(HainError::Evaluation(format!(
                "non-finite function value near entry {i}"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest entrywise [`relative_error`] between `analytic` and the central
/// difference of `f` at `at`.
pub fn finite_diff_check(f: impl Fn(&Matrix) -> f64, analytic: &Matrix, at: &Matrix, h: f64) -> Result<f64> {
    at.expect_same_shape(analytic, "gradient check")?;
    let numeric = central_difference(f, at, h)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
