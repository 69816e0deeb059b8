//! Small dense linear algebra on row-major `d × d` matrices.
//!
//! Dimensions here are the number of attributes in a joint density (1 to a
//! handful), so everything is plain loops over `Vec<f64>`.

use alloc::vec;
use alloc::vec::Vec;

/// Unbiased (n − 1) sample covariance of `n` points stored row-major with
/// `d` coordinates each. Two-pass: means first, then centered products.
pub fn covariance(points: &[f64], d: usize) -> Vec<f64> {
    let n = points.len() / d;
    let mut mean = vec![0.0; d];
    for row in points.chunks_exact(d) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for row in points.chunks_exact(d) {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    cov
}

pub fn trace(a: &[f64], d: usize) -> f64 {
    (0..d).map(|i| a[i * d + i]).sum()
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = a`.
///
/// Returns `None` when a pivot is not positive relative to `tol` times the
/// largest diagonal entry, i.e. the matrix is singular or indefinite at
/// that resolution.
pub fn cholesky(a: &[f64], d: usize, tol: f64) -> Option<Vec<f64>> {
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max);
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut pivot = a[j * d + j];
        for k in 0..j {
            pivot -= l[j * d + k] * l[j * d + k];
        }
        if !(pivot > tol * scale) {
            return None;
        }
        let ljj = libm::sqrt(pivot);
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Some(l)
}

/// Cholesky factor of a positive semi-definite matrix. Pivots within `tol`
/// of zero zero out their column instead of failing, so rank-deficient
/// correlation matrices still factor. Returns `None` for a pivot below
/// `-tol`.
pub fn cholesky_psd(a: &[f64], d: usize, tol: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut pivot = a[j * d + j];
        for k in 0..j {
            pivot -= l[j * d + k] * l[j * d + k];
        }
        if pivot < -tol {
            return None;
        }
        if pivot <= tol {
            for i in (j + 1)..d {
                let mut s = a[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if libm::fabs(s) > libm::sqrt(tol) {
                    return None;
                }
            }
            continue;
        }
        let ljj = libm::sqrt(pivot);
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Some(l)
}

/// Solves `L z = b` for lower-triangular `L`, writing into `z`.
#[inline]
pub fn forward_substitute(l: &[f64], d: usize, b: &[f64], z: &mut [f64]) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * z[k];
        }
        z[i] = s / l[i * d + i];
    }
}

/// `log det(L Lᵀ)` from its Cholesky factor.
pub fn log_det_from_cholesky(l: &[f64], d: usize) -> f64 {
    2.0 * (0..d).map(|i| libm::log(l[i * d + i])).sum::<f64>()
}

/// `(L Lᵀ)⁻¹` from its Cholesky factor.
pub fn inverse_from_cholesky(l: &[f64], d: usize) -> Vec<f64> {
    // Columns of L⁻¹, then inv = L⁻ᵀ L⁻¹.
    let mut linv = vec![0.0; d * d];
    let mut e = vec![0.0; d];
    let mut col = vec![0.0; d];
    for j in 0..d {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        forward_substitute(l, d, &e, &mut col);
        for i in 0..d {
            linv[i * d + j] = col[i];
        }
    }
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += linv[k * d + i] * linv[k * d + j];
            }
            inv[i * d + j] = s;
        }
    }
    inv
}

/// `L x` for lower-triangular `L`.
#[inline]
pub fn lower_mul(l: &[f64], d: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..d {
        let mut s = 0.0;
        for k in 0..=i {
            s += l[i * d + k] * x[k];
        }
        out[i] = s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_is_unbiased() {
        // points (-1), (1): mean 0, sum of squares 2, n - 1 = 1
        let c = covariance(&[-1.0, 1.0], 1);
        assert_eq!(c, vec![2.0]);
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = [4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let l = cholesky(&a, 3, 1e-14).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((s - a[i * 3 + j]).abs() < 1e-12);
            }
        }
        let inv = inverse_from_cholesky(&l, 3);
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected_by_strict_and_accepted_by_psd() {
        let a = [1.0, 1.0, 1.0, 1.0];
        assert!(cholesky(&a, 2, 1e-12).is_none());
        let l = cholesky_psd(&a, 2, 1e-12).unwrap();
        assert_eq!(l, vec![1.0, 0.0, 1.0, 0.0]);
        assert!(cholesky_psd(&[1.0, 2.0, 2.0, 1.0], 2, 1e-12).is_none());
    }
}
