//! Small dense Hermitian solves for kernel calibration.

use num_complex::Complex64;

/// Lower-triangular Cholesky factor of a Hermitian positive-definite `m × m` matrix.
///
/// Returns `None` if a pivot is not strictly positive.
pub fn cholesky(a: &[Complex64], m: usize) -> Option<Vec<Complex64>> {
    let mut l = vec![Complex64::default(); m * m];
    for j in 0..m {
        let mut d = a[j * m + j].re;
        for k in 0..j {
            d -= l[j * m + k].norm_sqr();
        }
        if !d.is_finite() || d <= 0.0 {
            return None;
        }
        let djj = d.sqrt();
        l[j * m + j] = Complex64::new(djj, 0.0);
        for i in (j + 1)..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k].conj();
            }
            l[i * m + j] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L Lᴴ x = b` in place for each of the `k` columns of the row-major `m × k` matrix `b`.
pub fn cholesky_solve(l: &[Complex64], m: usize, b: &mut [Complex64], k: usize) {
    for col in 0..k {
        for i in 0..m {
            let mut s = b[i * k + col];
            for j in 0..i {
                s -= l[i * m + j] * b[j * k + col];
            }
            b[i * k + col] = s / l[i * m + i].re;
        }
        for i in (0..m).rev() {
            let mut s = b[i * k + col];
            for j in (i + 1)..m {
                s -= l[j * m + i].conj() * b[j * k + col];
            }
            b[i * k + col] = s / l[i * m + i].re;
        }
    }
}

/// `a (m × m) · x (m × k)`, row-major.
pub fn matmul(a: &[Complex64], x: &[Complex64], m: usize, k: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); m * k];
    for i in 0..m {
        for j in 0..m {
            let aij = a[i * m + j];
            if aij == Complex64::default() {
                continue;
            }
            for c in 0..k {
                out[i * k + c] += aij * x[j * k + c];
            }
        }
    }
    out
}
