//! Marginal discrete wavelet transform features.

use crate::error::{PipelineError, Result};

/// Daubechies low-pass (scaling) coefficients for db7, normalized so
/// that Σh = √2 (orthonormal convention). Frozen from the standard
/// spectral-factorization construction.
const DB7_LOWPASS: [f64; 14] = [
    0.0778520540850094,
    0.39653931948191834,
    0.7291320908462369,
    0.4697822874051938,
    -0.14390600392856642,
    -0.2240361849938765,
    0.07130921926682993,
    0.0806126091510828,
    -0.03802993693501451,
    -0.016574541630666833,
    0.012550998556099915,
    0.00042957797292137085,
    -0.0018016407040474974,
    0.00035371379997452154,
];

/// Returns the orthonormal low-pass filter for a Daubechies wavelet by
/// index (db1 = Haar). Indices with closed forms are computed; db7 is
/// the frozen table above.
fn daubechies_lowpass(index: usize) -> Result<Vec<f64>> {
    let sqrt2 = std::f64::consts::SQRT_2;
    match index {
        1 => Ok(vec![1.0 / sqrt2, 1.0 / sqrt2]),
        2 => {
            let s3 = 3.0f64.sqrt();
            let d = 4.0 * sqrt2;
            Ok(vec![
                (1.0 + s3) / d,
                (3.0 + s3) / d,
                (3.0 - s3) / d,
                (1.0 - s3) / d,
            ])
        }
        7 => Ok(DB7_LOWPASS.to_vec()),
        _ => Err(PipelineError::unsupported(format!(
            "Daubechies index {index} not available (supported: 1, 2, 7)"
        ))),
    }
}

/// One periodic analysis step: returns (approximation, detail), each of
/// length `n/2`. The quadrature mirror high-pass is
/// `g[j] = (−1)^j · h[L−1−j]`.
fn dwt_step(x: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let l = h.len();
    let half = n / 2;
    let mut approx = Vec::with_capacity(half);
    let mut detail = Vec::with_capacity(half);
    for k in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for (j, &hj) in h.iter().enumerate() {
            let idx = (2 * k + j) % n;
            let gj = if j % 2 == 0 { h[l - 1 - j] } else { -h[l - 1 - j] };
            a += hj * x[idx];
            d += gj * x[idx];
        }
        approx.push(a);
        detail.push(d);
    }
    (approx, detail)
}

/// Full periodic decomposition: detail vectors for levels 1 (finest)
/// through `levels`, plus the final approximation.
fn dwt_decompose(
    x: &[f64],
    wavelet_index: usize,
    levels: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let h = daubechies_lowpass(wavelet_index)?;
    let n = x.len();
    if levels == 0 {
        return Err(PipelineError::argument("wavelet levels must be at least 1"));
    }
    let min_len = h.len() << levels;
    if n < min_len {
        return Err(PipelineError::argument(format!(
            "mDWT with db{wavelet_index} at {levels} levels needs at least {min_len} samples, got {n}"
        )));
    }
    if !n.is_multiple_of(1 << levels) {
        return Err(PipelineError::argument(format!(
            "mDWT at {levels} levels needs a length divisible by {}, got {n}",
            1 << levels
        )));
    }
    let mut details = Vec::with_capacity(levels);
    let mut current = x.to_vec();
    for _ in 0..levels {
        let (a, d) = dwt_step(&current, &h);
        details.push(d);
        current = a;
    }
    Ok((details, current))
}

/// Computes the marginal DWT: `Σ|detail|` per level, returned
/// coarsest-to-finest.
pub fn compute_mdwt(x: &[f64], wavelet_index: usize, levels: usize) -> Result<Vec<f64>> {
    let (details, _) = dwt_decompose(x, wavelet_index, levels)?;
    Ok(details
        .iter()
        .rev()
        .map(|d| d.iter().map(|v| v.abs()).sum())
        .collect())
}

#[cfg(test)]
pub(crate) fn decompose_for_tests(
    x: &[f64],
    wavelet_index: usize,
    levels: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    dwt_decompose(x, wavelet_index, levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn zero_vector_gives_zero_marginals() {
        let m = compute_mdwt(&vec![0.0; 256], 7, 3).unwrap();
        assert_eq!(m, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn marginals_are_homogeneous_of_degree_one() {
        let mut rng = rng_from_seed(59);
        let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let m1 = compute_mdwt(&x, 7, 3).unwrap();
        let m2 = compute_mdwt(&doubled, 7, 3).unwrap();
        for (a, b) in m1.iter().zip(&m2) {
            assert!((2.0 * a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn haar_single_level_matches_pairwise_differences() {
        // db1 details are (x[2k] − x[2k+1])/√2; hand-computed oracle.
        let x = [1.0, 1.0, 0.0, 0.0, 3.0, -1.0, 2.0, 2.0];
        let (details, approx) = decompose_for_tests(&x, 1, 1).unwrap();
        let s = std::f64::consts::SQRT_2;
        let expect_d = [0.0, 0.0, 4.0 / s, 0.0];
        let expect_a = [2.0 / s, 0.0, 2.0 / s, 4.0 / s];
        for (got, want) in details[0].iter().zip(&expect_d) {
            assert!((got - want).abs() < 1e-12, "detail {got} vs {want}");
        }
        for (got, want) in approx.iter().zip(&expect_a) {
            assert!((got - want).abs() < 1e-12, "approx {got} vs {want}");
        }
        let marg = compute_mdwt(&x, 1, 1).unwrap();
        assert!((marg[0] - 4.0 / s).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_transform_preserves_energy() {
        // Parseval on the transform coefficients, before marginalization.
        let mut rng = rng_from_seed(61);
        for &(idx, levels) in &[(1usize, 3usize), (2, 3), (7, 3)] {
            let x: Vec<f64> = (0..512).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (details, approx) = decompose_for_tests(&x, idx, levels).unwrap();
            let input: f64 = x.iter().map(|v| v * v).sum();
            let coeffs: f64 = details
                .iter()
                .flat_map(|d| d.iter())
                .chain(approx.iter())
                .map(|v| v * v)
                .sum();
            let rel = (input - coeffs).abs() / input;
            assert!(rel < 1e-8, "db{idx}: relative energy error {rel}");
        }
    }

    #[test]
    fn constant_vector_has_zero_details() {
        // Every Daubechies wavelet annihilates constants (one vanishing
        // moment at minimum), and periodic extension keeps that exact.
        for idx in [1usize, 2, 7] {
            let m = compute_mdwt(&vec![1.75; 256], idx, 3).unwrap();
            for v in &m {
                assert!(v.abs() < 1e-10, "db{idx} marginal {v}");
            }
        }
    }

    #[test]
    fn marginals_are_ordered_coarsest_to_finest() {
        // A fast alternation (Nyquist content) lands in the finest
        // detail; the returned vector's last entry holds it.
        let x: Vec<f64> = (0..256).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let m = compute_mdwt(&x, 1, 3).unwrap();
        assert!(m[2] > 10.0 * m[1].max(m[0]).max(1e-12), "{m:?}");
    }

    #[test]
    fn too_short_and_unsupported_inputs_error() {
        assert!(matches!(
            compute_mdwt(&vec![0.0; 64], 7, 3).unwrap_err(),
            PipelineError::Argument(_)
        ));
        assert!(matches!(
            compute_mdwt(&vec![0.0; 256], 5, 3).unwrap_err(),
            PipelineError::Unsupported(_)
        ));
        assert!(matches!(
            compute_mdwt(&vec![0.0; 256], 7, 0).unwrap_err(),
            PipelineError::Argument(_)
        ));
    }
}
