//! Frequency-domain window features: mean power and mean frequency.

use crate::error::{PipelineError, Result};
use rustfft::{num_complex::Complex, FftPlanner};

/// Spectral summary of one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralFeatures {
    /// Mean of the one-sided periodogram over its bins.
    pub mnp: f64,
    /// Power-weighted mean frequency (spectral centroid) in Hz.
    pub mnf: f64,
    /// True when the mean-removed window carried no power; `mnf` is then
    /// defined as 0 rather than 0/0.
    pub zero_power: bool,
}

/// Computes MNP and MNF from the periodogram of the mean-removed window
/// (rectangular taper, one-sided spectrum excluding the DC bin).
pub fn compute_spectral_features(x: &[f64], sample_rate_hz: f64) -> Result<SpectralFeatures> {
    let n = x.len();
    if n < 8 {
        return Err(PipelineError::argument(format!(
            "spectral features need at least 8 samples, got {n}"
        )));
    }
    if !sample_rate_hz.is_finite() || sample_rate_hz <= 0.0 {
        return Err(PipelineError::argument(format!(
            "sample rate must be positive, got {sample_rate_hz}"
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(PipelineError::validation(format!(
            "sample {i} is not finite"
        )));
    }

    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    // One-sided bins 1..=n/2 (DC is zero after mean removal; for even n
    // the last bin is the Nyquist bin and appears once).
    let half = n / 2;
    let bin_hz = sample_rate_hz / n as f64;
    let mut total_power = 0.0;
    let mut weighted = 0.0;
    let mut power_sum_for_mnp = 0.0;
    for k in 1..=half {
        let mut p = buf[k].norm_sqr() / (n as f64 * n as f64);
        let interior = k != half || n % 2 == 1;
        if interior {
            p *= 2.0; // fold in the conjugate bin
        }
        power_sum_for_mnp += p;
        total_power += p;
        weighted += k as f64 * bin_hz * p;
    }
    let mnp = power_sum_for_mnp / half as f64;
    let (mnf, zero_power) = if total_power > 0.0 {
        (weighted / total_power, false)
    } else {
        (0.0, true)
    };
    Ok(SpectralFeatures { mnp, mnf, zero_power })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|t| amp * (2.0 * std::f64::consts::PI * freq * t as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn pure_tone_centroid_sits_on_the_tone() {
        let fs = 2000.0;
        let n = 2000; // bin width 1 Hz
        let x = tone(100.0, fs, n, 1.0);
        let s = compute_spectral_features(&x, fs).unwrap();
        assert!((s.mnf - 100.0).abs() <= 1.0, "mnf {}", s.mnf);
        assert!(!s.zero_power);
    }

    #[test]
    fn zero_vector_is_flagged() {
        let s = compute_spectral_features(&vec![0.0; 256], 2000.0).unwrap();
        assert_eq!(s.mnp, 0.0);
        assert_eq!(s.mnf, 0.0);
        assert!(s.zero_power);
    }

    #[test]
    fn equal_power_mix_centroid_is_midway() {
        let fs = 2000.0;
        let n = 2000;
        let mut x = tone(50.0, fs, n, 1.0);
        let other = tone(150.0, fs, n, 1.0);
        for (a, b) in x.iter_mut().zip(&other) {
            *a += b;
        }
        let s = compute_spectral_features(&x, fs).unwrap();
        assert!((s.mnf - 100.0).abs() <= 1.0, "mnf {}", s.mnf);
    }

    #[test]
    fn tone_power_is_recovered() {
        // A unit sine has power 1/2; the one-sided periodogram of a
        // whole number of periods concentrates it in one bin, so the
        // bin sum equals 1/2 and MNP = (1/2) / (n/2).
        let fs = 2000.0;
        let n = 1000;
        let x = tone(100.0, fs, n, 1.0);
        let s = compute_spectral_features(&x, fs).unwrap();
        let expected = 0.5 / (n as f64 / 2.0);
        assert!(
            (s.mnp - expected).abs() < 1e-9,
            "mnp {} expected {expected}",
            s.mnp
        );
    }

    #[test]
    fn mean_removal_ignores_dc_offset() {
        let fs = 2000.0;
        let n = 2000;
        let x = tone(100.0, fs, n, 1.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + 5.0).collect();
        let a = compute_spectral_features(&x, fs).unwrap();
        let b = compute_spectral_features(&shifted, fs).unwrap();
        assert!((a.mnf - b.mnf).abs() < 1e-9);
        assert!((a.mnp - b.mnp).abs() < 1e-12);
    }

    #[test]
    fn short_window_is_an_argument_error() {
        assert!(matches!(
            compute_spectral_features(&[0.0; 7], 2000.0).unwrap_err(),
            PipelineError::Argument(_)
        ));
    }
}
