//! Dense symmetric linear algebra for small matrices.
//!
//! The pipeline only ever factors matrices whose side is the feature
//! count (tens to low hundreds), so simple O(n^3) routines are both
//! sufficient and easy to audit: a cyclic Jacobi eigensolver for
//! spectra/conditioning/PCA, and a Cholesky factorization for
//! Mahalanobis distances. Matrices are row-major `Vec<f64>` of length
//! `n * n`; symmetry is the caller's responsibility and is asserted
//! where cheap.

/// Eigendecomposition of a symmetric matrix.
///
/// `values[j]` is paired with `vectors[j]`, sorted by descending
/// eigenvalue. Eigenvectors are unit length and mutually orthogonal to
/// machine precision (Jacobi accumulates explicit rotations).
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric `n x n` matrix.
///
/// Sweeps rotate every off-diagonal pair per pass and stop when the
/// off-diagonal Frobenius mass is negligible relative to the matrix
/// norm. For the matrix sizes used here convergence takes a handful of
/// sweeps; 100 sweeps is a generous safety bound.
pub fn sym_eigen(mat: &[f64], n: usize) -> SymEigen {
    assert_eq!(mat.len(), n * n, "matrix length must be n*n");
    if n == 0 {
        return SymEigen {
            values: vec![],
            vectors: vec![],
        };
    }
    let mut a = mat.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob2: f64 = a.iter().map(|x| x * x).sum();
    let tol = 1e-30 * frob2.max(1.0);

    for _sweep in 0..100 {
        let mut off2 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off2 += a[p * n + q] * a[p * n + q];
            }
        }
        if 2.0 * off2 <= tol {
            break;
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-magnitude root of t^2 + 2 t theta - 1 = 0 for
                // numerical stability.
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = a[i * n + p];
                        let aiq = a[i * n + q];
                        let new_ip = aip - s * (aiq + tau * aip);
                        let new_iq = aiq + s * (aip - tau * aiq);
                        a[i * n + p] = new_ip;
                        a[p * n + i] = new_ip;
                        a[i * n + q] = new_iq;
                        a[q * n + i] = new_iq;
                    }
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = vip - s * (viq + tau * vip);
                    v[i * n + q] = viq + s * (vip - tau * viq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .expect("eigenvalues are finite")
    });
    let values: Vec<f64> = order.iter().map(|&j| a[j * n + j]).collect();
    let vectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&j| (0..n).map(|i| v[i * n + j]).collect())
        .collect();
    SymEigen { values, vectors }
}

/// Spectral condition number |lambda|_max / |lambda|_min of a symmetric
/// matrix. Returns `f64::INFINITY` when the smallest magnitude is zero.
pub fn sym_condition_number(mat: &[f64], n: usize) -> f64 {
    let eig = sym_eigen(mat, n);
    let max = eig.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = eig
        .values
        .iter()
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factorization `A = L L^T` of a symmetric positive-definite
/// matrix. Returns the lower factor (row-major, strictly-upper entries
/// zero), or `None` if a pivot is non-positive or non-finite — i.e. the
/// matrix is not numerically positive-definite.
pub fn cholesky(mat: &[f64], n: usize) -> Option<Vec<f64>> {
    assert_eq!(mat.len(), n * n, "matrix length must be n*n");
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = mat[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `A x = b` given the lower Cholesky factor of `A`, via one
/// forward and one backward substitution.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    assert_eq!(b.len(), n);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Inverse of a symmetric positive-definite matrix from its lower
/// Cholesky factor, by solving against each basis vector. The result is
/// symmetrized to remove the last-bit asymmetry of independent solves.
pub fn spd_inverse_from_cholesky(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = cholesky_solve(l, n, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (inv[i * n + j] + inv[j * n + i]);
            inv[i * n + j] = avg;
            inv[j * n + i] = avg;
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat_vec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
        (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
            .collect()
    }

    #[test]
    fn eigen_of_known_two_by_two() {
        let a = vec![2.0, 1.0, 1.0, 2.0];
        let eig = sym_eigen(&a, 2);
        assert!((eig.values[0] - 3.0).abs() < 1e-12);
        assert!((eig.values[1] - 1.0).abs() < 1e-12);
        // First eigenvector is (1,1)/sqrt(2) up to sign.
        let v = &eig.vectors[0];
        assert!((v[0].abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((v[0] - v[1]).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_and_is_orthonormal() {
        // Fixed pseudo-random symmetric matrix.
        let n = 8;
        let mut a = vec![0.0; n * n];
        let mut state = 42u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for i in 0..n {
            for j in 0..=i {
                let x = next();
                a[i * n + j] = x;
                a[j * n + i] = x;
            }
        }
        let eig = sym_eigen(&a, n);
        // Residuals ||A v - lambda v||.
        for j in 0..n {
            let av = mat_vec(&a, n, &eig.vectors[j]);
            for i in 0..n {
                assert!((av[i] - eig.values[j] * eig.vectors[j][i]).abs() < 1e-10);
            }
        }
        // Orthonormality.
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = eig.vectors[i]
                    .iter()
                    .zip(&eig.vectors[j])
                    .map(|(x, y)| x * y)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
        // Descending order.
        for j in 1..n {
            assert!(eig.values[j - 1] >= eig.values[j]);
        }
    }

    #[test]
    fn cholesky_of_known_matrix() {
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        assert!((l[0] - 2.0).abs() < 1e-15);
        assert!((l[2] - 1.0).abs() < 1e-15);
        assert!((l[3] - 2.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[1], 0.0);

        let x = cholesky_solve(&l, 2, &[8.0, 7.0]);
        // A x = b  =>  x = A^{-1} [8,7] = [ (3*8-2*7)/8, (4*7-2*8)/8 ].
        assert!((x[0] - 1.25).abs() < 1e-12);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(cholesky(&a, 2).is_none());
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = vec![4.0, 2.0, 0.5, 2.0, 3.0, 1.0, 0.5, 1.0, 2.0];
        let l = cholesky(&a, 3).unwrap();
        let inv = spd_inverse_from_cholesky(&l, 3);
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += inv[i * 3 + k] * a[k * 3 + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn condition_number_of_diagonal() {
        let a = vec![100.0, 0.0, 0.0, 0.5];
        assert!((sym_condition_number(&a, 2) - 200.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn cholesky_roundtrips_random_spd(values in proptest::collection::vec(-1.0f64..1.0, 25)) {
            // Build SPD as B^T B + 0.1 I from a random 5x5 B.
            let n = 5;
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += values[k * n + i] * values[k * n + j];
                    }
                    a[i * n + j] = s + if i == j { 0.1 } else { 0.0 };
                }
            }
            let l = cholesky(&a, n).expect("SPD by construction");
            // L L^T == A within roundoff.
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += l[i * n + k] * l[j * n + k];
                    }
                    prop_assert!((s - a[i * n + j]).abs() < 1e-10);
                }
            }
        }
    }
}
