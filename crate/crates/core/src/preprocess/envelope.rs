//! Analytic (Hilbert) envelope via the frequency-domain construction.
//!
//! The analytic signal of a real series keeps the original as its real
//! part and the Hilbert transform as its imaginary part; its magnitude
//! is the instantaneous amplitude envelope. Construction: forward FFT,
//! zero the negative-frequency bins, double the positive ones (DC and
//! Nyquist kept as-is), inverse FFT, take magnitudes.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{PipelineError, Result};

/// Returns the nonnegative envelope of `signal`, same length.
pub fn analytic_envelope(signal: &[f64]) -> Result<Vec<f64>> {
    if signal.len() < 2 {
        return Err(PipelineError::argument(format!(
            "envelope needs at least 2 samples, got {}",
            signal.len()
        )));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(PipelineError::validation(format!(
            "signal sample {i} is not finite"
        )));
    }
    let n = signal.len();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);

    // Analytic-signal spectrum weights: h[0]=1, h[Nyquist]=1 (even n),
    // h=2 on positive frequencies, h=0 on negative ones.
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        if 2 * k < n {
            *v *= 2.0;
        } else if 2 * k > n {
            *v = Complex::new(0.0, 0.0);
        }
    }

    planner.plan_fft_inverse(n).process(&mut buf);
    // rustfft leaves the inverse unscaled; fold in 1/n while taking the
    // magnitude.
    let scale = 1.0 / n as f64;
    Ok(buf.into_iter().map(|c| c.norm() * scale).collect())
}
