//! Small dense linear-algebra helpers used by the scoring and theory code.

/// Dot product with single-precision accumulation (hot hashing path).
#[inline]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Dot product accumulated in double precision (reference paths).
#[inline]
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

/// Euclidean norm of an `f32` slice, accumulated in double precision.
#[inline]
pub fn norm_f64(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

/// Euclidean norm of an `f64` slice.
#[inline]
pub fn norm_f64_slice(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean distance between two `f64` vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Spectral norm (largest singular value) of a row-major `rows x cols` matrix,
/// by power iteration on the Gram operator to `1e-6` relative accuracy.
///
/// The start vector is a fixed deterministic unit vector, so repeated calls
/// agree bit-for-bit.
pub fn spectral_norm(matrix: &[f32], rows: usize, cols: usize) -> f64 {
    assert_eq!(matrix.len(), rows * cols);
    if rows == 0 || cols == 0 {
        return 0.0;
    }

    // Deterministic start with irrational-ish coordinates so it is never
    // orthogonal to the leading singular subspace in practice.
    let mut v: Vec<f64> = (0..cols)
        .map(|i| 1.0 + ((i + 1) as f64 * 0.754_877_666).sin() * 0.5)
        .collect();
    let start_norm = norm_f64_slice(&v);
    v.iter_mut().for_each(|x| *x /= start_norm);

    let mut av = vec![0.0f64; rows];
    let mut sigma_prev = 0.0f64;
    for _ in 0..10_000 {
        // av = A v
        for (r, slot) in av.iter_mut().enumerate() {
            let row = &matrix[r * cols..(r + 1) * cols];
            *slot = row.iter().zip(&v).map(|(m, x)| *m as f64 * x).sum();
        }
        let sigma = norm_f64_slice(&av);
        if sigma == 0.0 {
            return 0.0;
        }
        // v = A^T av, renormalized
        for x in v.iter_mut() {
            *x = 0.0;
        }
        for (r, a) in av.iter().enumerate() {
            let row = &matrix[r * cols..(r + 1) * cols];
            for (c, m) in row.iter().enumerate() {
                v[c] += *m as f64 * a;
            }
        }
        let vn = norm_f64_slice(&v);
        if vn == 0.0 {
            return sigma;
        }
        v.iter_mut().for_each(|x| *x /= vn);

        if (sigma - sigma_prev).abs() <= 1e-6 * sigma {
            return sigma;
        }
        sigma_prev = sigma;
    }
    sigma_prev
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Jacobi eigenvalue sweep for small symmetric matrices; the independent
    /// check for the power iteration.
    fn max_eigenvalue_jacobi(mut a: Vec<f64>, n: usize) -> f64 {
        for _ in 0..200 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[p * n + q].abs();
                }
            }
            if off < 1e-14 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (a[q * n + q] - a[p * n + p]) / apq;
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i * n + i]).fold(f64::MIN, f64::max)
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        // diag(3, 1) has spectral norm 3
        let m = vec![3.0f32, 0.0, 0.0, 1.0];
        assert!((spectral_norm(&m, 2, 2) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_matches_jacobi_oracle() {
        let mut rng = crate::rng::stream_rng(2024, 0);
        for trial in 0..20 {
            let rows = 3 + trial % 6;
            let cols = 2 + trial % 5;
            let m: Vec<f32> = (0..rows * cols)
                .map(|_| rng.random::<f64>() as f32 * 2.0 - 1.0)
                .collect();
            // Gram matrix A^T A in f64
            let mut gram = vec![0.0f64; cols * cols];
            for r in 0..rows {
                for i in 0..cols {
                    for j in 0..cols {
                        gram[i * cols + j] +=
                            m[r * cols + i] as f64 * m[r * cols + j] as f64;
                    }
                }
            }
            let oracle = max_eigenvalue_jacobi(gram, cols).max(0.0).sqrt();
            let got = spectral_norm(&m, rows, cols);
            assert!(
                (got - oracle).abs() <= 1e-5 * oracle.max(1.0),
                "trial {trial}: power iteration {got} vs jacobi {oracle}"
            );
        }
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        let m = vec![0.0f32; 12];
        assert_eq!(spectral_norm(&m, 3, 4), 0.0);
    }
}
