//! Autoregressive coefficient estimation via Burg's method.

use crate::error::{PipelineError, Result};

/// Fits an AR(`order`) model to `x` with Burg's method and returns the
/// predictor coefficients `φ` of
/// `x[i] ≈ φ[0]·x[i−1] + … + φ[order−1]·x[i−order]`.
///
/// Burg minimizes the sum of forward and backward prediction-error
/// powers at each stage, which keeps the model stable on the short
/// windows used here. The running error power is non-increasing in the
/// order; [`compute_ar_coefficients_with_error`] exposes it per stage.
pub fn compute_ar_coefficients(x: &[f64], order: usize) -> Result<Vec<f64>> {
    compute_ar_coefficients_with_error(x, order).map(|(coeffs, _)| coeffs)
}

/// As [`compute_ar_coefficients`], additionally returning the
/// prediction-error power after each stage (`order + 1` entries, the
/// first being the zeroth-order signal power).
pub fn compute_ar_coefficients_with_error(
    x: &[f64],
    order: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    if order == 0 {
        return Err(PipelineError::argument("AR order must be at least 1"));
    }
    if n <= 2 * order {
        return Err(PipelineError::argument(format!(
            "AR({order}) needs more than {} samples, got {n}",
            2 * order
        )));
    }
    let first = x[0];
    if x.iter().all(|&v| v == first) {
        return Err(PipelineError::degenerate(
            "AR estimation on a constant signal",
        ));
    }

    // Polynomial convention a[0] = 1; reported φ[j] = −a[j+1].
    let mut a = vec![0.0f64; order + 1];
    a[0] = 1.0;
    let mut ef = x.to_vec(); // forward prediction errors
    let mut eb = x.to_vec(); // backward prediction errors
    let mut e = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut error_powers = Vec::with_capacity(order + 1);
    error_powers.push(e);

    for m in 1..=order {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in m..n {
            num += ef[i] * eb[i - 1];
            den += ef[i] * ef[i] + eb[i - 1] * eb[i - 1];
        }
        if den <= 0.0 {
            return Err(PipelineError::degenerate(format!(
                "AR stage {m}: zero prediction-error power"
            )));
        }
        let k = -2.0 * num / den;

        // a' = a + k·reverse(a), then the error recursions.
        let prev = a.clone();
        for j in 1..=m {
            a[j] = prev[j] + k * prev[m - j];
        }
        for i in (m..n).rev() {
            let f = ef[i];
            let b = eb[i - 1];
            ef[i] = f + k * b;
            eb[i] = b + k * f;
        }
        e *= 1.0 - k * k;
        error_powers.push(e);
    }

    let coeffs = a[1..].iter().map(|&v| -v).collect();
    Ok((coeffs, error_powers))
}
