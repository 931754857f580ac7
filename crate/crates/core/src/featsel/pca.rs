//! Principal component analysis on the correlation matrix.
//!
//! Features in the bank live on wildly different scales (IAV sums
//! hundreds of samples, ZC counts a handful of crossings), so the
//! decomposition standardizes every column to z-scores first —
//! equivalently, it eigendecomposes the correlation matrix. Components
//! come back in descending explained-variance order with a fixed sign
//! convention: the largest-magnitude loading of each component is
//! positive.

use crate::error::{PipelineError, Result};
use crate::linalg;

/// Full PCA decomposition plus the retention cut at the requested
/// cumulative explained-variance ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// All `d` components, descending by eigenvalue; `components[k]`
    /// is the length-`d` loading vector of component `k`.
    pub components: Vec<Vec<f64>>,
    /// Explained-variance ratio of every component; sums to 1.
    pub explained_variance_ratio: Vec<f64>,
    /// Smallest component count whose cumulative ratio reaches the
    /// requested retention.
    pub n_retained: usize,
    /// Projection of the standardized data onto all components
    /// (`scores[i][k]` = row i on component k).
    pub scores: Vec<Vec<f64>>,
    /// Per-column standardization parameters (training means and
    /// sample standard deviations).
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Standardizes `rows` column-wise and eigendecomposes the resulting
/// correlation matrix. A zero-variance column cannot be standardized
/// and is an error naming the column — callers filter those upstream.
pub fn pca(rows: &[Vec<f64>], retain_ratio: f64) -> Result<PcaResult> {
    let n = rows.len();
    if n < 2 {
        return Err(PipelineError::argument(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(PipelineError::argument(
            "PCA input must be a nonempty rectangular matrix",
        ));
    }
    if !(retain_ratio > 0.0 && retain_ratio <= 1.0) {
        return Err(PipelineError::argument(format!(
            "retain_ratio must be in (0, 1], got {retain_ratio}"
        )));
    }

    let mut means = vec![0.0; d];
    for row in rows {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut stds = vec![0.0; d];
    for row in rows {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for (j, s) in stds.iter_mut().enumerate() {
        *s = (*s / (n - 1) as f64).sqrt();
        if !(*s > 0.0) || !s.is_finite() {
            return Err(PipelineError::degenerate(format!(
                "column {j} has zero variance; filter constant columns before PCA"
            )));
        }
    }

    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&means)
                .zip(&stds)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();

    // Correlation matrix Zᵀ Z / (n−1).
    let mut corr = vec![0.0; d * d];
    for zr in &z {
        for i in 0..d {
            let zi = zr[i];
            for j in i..d {
                corr[i * d + j] += zi * zr[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = corr[i * d + j] / (n - 1) as f64;
            corr[i * d + j] = v;
            corr[j * d + i] = v;
        }
    }

    let eig = linalg::sym_eigen(&corr, d);
    // The correlation matrix is PSD; clamp the tiny negative
    // eigenvalues roundoff can produce.
    let values: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(PipelineError::numerical(
            "correlation matrix has no positive eigenvalues",
        ));
    }
    let explained_variance_ratio: Vec<f64> = values.iter().map(|v| v / total).collect();

    let mut components = eig.vectors;
    for comp in &mut components {
        let (mut max_idx, mut max_abs) = (0, 0.0);
        for (i, &c) in comp.iter().enumerate() {
            if c.abs() > max_abs {
                max_abs = c.abs();
                max_idx = i;
            }
        }
        if comp[max_idx] < 0.0 {
            for c in comp.iter_mut() {
                *c = -*c;
            }
        }
    }

    let mut n_retained = d;
    let mut cum = 0.0;
    for (k, r) in explained_variance_ratio.iter().enumerate() {
        cum += r;
        if cum >= retain_ratio - 1e-12 {
            n_retained = k + 1;
            break;
        }
    }

    let scores: Vec<Vec<f64>> = z
        .iter()
        .map(|zr| {
            components
                .iter()
                .map(|comp| zr.iter().zip(comp).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();

    Ok(PcaResult {
        components,
        explained_variance_ratio,
        n_retained,
        scores,
        means,
        stds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn perfectly_correlated_pair_collapses_to_one_component() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let x = i as f64 * 0.1;
                vec![x, 3.0 * x - 2.0]
            })
            .collect();
        let p = pca(&rows, 0.85).unwrap();
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
        assert_eq!(p.n_retained, 1);
    }

    #[test]
    fn isotropic_data_needs_every_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(314);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let p = pca(&rows, 0.85).unwrap();
        for r in &p.explained_variance_ratio {
            assert!((r - 1.0 / 3.0).abs() < 0.03, "ratio {r}");
        }
        assert_eq!(p.n_retained, 3);
    }

    #[test]
    fn components_are_orthonormal_with_nonincreasing_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let a: f64 = rng.gen();
                let b: f64 = rng.gen();
                vec![a, 0.7 * a + 0.3 * b, b, a - b + 0.1 * rng.gen::<f64>()]
            })
            .collect();
        let p = pca(&rows, 0.85).unwrap();
        let d = 4;
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = p.components[i]
                    .iter()
                    .zip(&p.components[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9, "({i},{j}) dot {dot}");
            }
        }
        for w in p.explained_variance_ratio.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        let sum: f64 = p.explained_variance_ratio.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        // Sign convention: dominant loading positive.
        for comp in &p.components {
            let max = comp.iter().fold(0.0f64, |acc, &c| {
                if c.abs() > acc.abs() {
                    c
                } else {
                    acc
                }
            });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn truncated_reconstruction_obeys_the_eckart_young_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // Strong 2-factor structure in 5 dimensions plus noise.
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let f1: f64 = rng.sample(StandardNormal);
                let f2: f64 = rng.sample(StandardNormal);
                (0..5)
                    .map(|j| {
                        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.2;
                        f1 * (j as f64 + 1.0) * 0.3 + f2 * ((-1.0f64).powi(j)) + noise
                    })
                    .collect()
            })
            .collect();
        let p = pca(&rows, 0.85).unwrap();
        let n = rows.len();
        let d = 5;
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&p.means)
                    .zip(&p.stds)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect();
        let frob = |m: &[Vec<f64>]| -> f64 {
            m.iter()
                .flat_map(|r| r.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        };
        for m in [p.n_retained, d] {
            let recon: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..d)
                        .map(|j| {
                            (0..m).map(|k| p.scores[i][k] * p.components[k][j]).sum()
                        })
                        .collect()
                })
                .collect();
            let err: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..d).map(|j| z[i][j] - recon[i][j]).collect())
                .collect();
            let rel = frob(&err) / frob(&z);
            let cum: f64 = p.explained_variance_ratio[..m].iter().sum();
            let bound = (1.0 - cum).max(0.0).sqrt();
            assert!(rel <= bound + 1e-9, "m={m}: rel {rel} > bound {bound}");
        }
    }

    #[test]
    fn zero_variance_column_is_a_named_error() {
        let rows = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]];
        let err = pca(&rows, 0.85).unwrap_err();
        assert!(err.to_string().contains("column 1"), "{err}");
        assert!(pca(&rows[..1], 0.85).is_err());
        let ok_rows = vec![vec![1.0, 0.0], vec![2.0, 1.0]];
        assert!(pca(&ok_rows, 0.0).is_err());
        assert!(pca(&ok_rows, 1.5).is_err());
    }
}
