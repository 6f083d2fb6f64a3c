//! Centered, unitary FFT helpers on row-major planes.
//!
//! "Centered" means the zero frequency sits at index `n / 2` in both the
//! input and output of every transform (ifftshift → FFT → fftshift).

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

fn direction(inverse: bool) -> FftDirection {
    if inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    }
}

/// Centered unitary 1D transform of every contiguous row of length `n` in `data`.
pub fn fft1c_rows(data: &mut [Complex64], n: usize, inverse: bool) {
    if n == 0 || data.is_empty() {
        return;
    }
    debug_assert_eq!(data.len() % n, 0);
    let fft = plan(n, direction(inverse));
    let half = n / 2;
    for row in data.chunks_exact_mut(n) {
        row.rotate_left(half);
    }
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    let scale = 1.0 / (n as f64).sqrt();
    for row in data.chunks_exact_mut(n) {
        row.rotate_right(half);
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
}

/// Out-of-place transpose of a `rows × cols` row-major matrix.
pub fn transpose(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    const BLOCK: usize = 16;
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Centered unitary 2D transform of one `n_rows × n_cols` plane, in place.
pub fn fft2c_plane(plane: &mut [Complex64], n_rows: usize, n_cols: usize, inverse: bool) {
    let mut scratch = vec![Complex64::default(); plane.len()];
    fft2c_plane_with(plane, n_rows, n_cols, inverse, &mut scratch);
}

/// As [`fft2c_plane`] with a caller-provided scratch buffer of the plane's length.
pub fn fft2c_plane_with(
    plane: &mut [Complex64],
    n_rows: usize,
    n_cols: usize,
    inverse: bool,
    scratch: &mut [Complex64],
) {
    fft1c_rows(plane, n_cols, inverse);
    transpose(plane, n_rows, n_cols, scratch);
    fft1c_rows(scratch, n_rows, inverse);
    transpose(scratch, n_cols, n_rows, plane);
}
