//! Orthonormal multi-level 2D Haar transform.
//!
//! Coefficients use the usual Mallat layout: after each level the
//! approximation band occupies the top-left quadrant of the previous one.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kspace::ComplexImage;

pub fn check_levels(rows: usize, cols: usize, levels: usize) -> Result<()> {
    let div = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if div == 0 || !rows.is_multiple_of(div) || !cols.is_multiple_of(div) {
        return Err(Error::InvalidConfig(format!(
            "{rows}x{cols} plane is not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

fn analyze_1d(x: &mut [Complex64], tmp: &mut [Complex64]) {
    let h = x.len() / 2;
    for i in 0..h {
        let a = x[2 * i];
        let b = x[2 * i + 1];
        tmp[i] = (a + b) * FRAC_1_SQRT_2;
        tmp[h + i] = (a - b) * FRAC_1_SQRT_2;
    }
    x.copy_from_slice(&tmp[..x.len()]);
}

fn synthesize_1d(x: &mut [Complex64], tmp: &mut [Complex64]) {
    let h = x.len() / 2;
    for i in 0..h {
        let s = x[i];
        let d = x[h + i];
        tmp[2 * i] = (s + d) * FRAC_1_SQRT_2;
        tmp[2 * i + 1] = (s - d) * FRAC_1_SQRT_2;
    }
    x.copy_from_slice(&tmp[..x.len()]);
}

fn for_each_column(
    plane: &mut [Complex64],
    cols: usize,
    r: usize,
    c: usize,
    f: &mut impl FnMut(&mut [Complex64]),
) {
    let mut col = vec![Complex64::default(); r];
    for j in 0..c {
        for i in 0..r {
            col[i] = plane[i * cols + j];
        }
        f(&mut col);
        for i in 0..r {
            plane[i * cols + j] = col[i];
        }
    }
}

/// In-place forward transform of a row-major `rows × cols` plane.
pub fn forward_plane(plane: &mut [Complex64], rows: usize, cols: usize, levels: usize) {
    let mut tmp = vec![Complex64::default(); rows.max(cols)];
    let (mut r, mut c) = (rows, cols);
    for _ in 0..levels {
        for i in 0..r {
            analyze_1d(&mut plane[i * cols..i * cols + c], &mut tmp);
        }
        for_each_column(plane, cols, r, c, &mut |col| analyze_1d(col, &mut tmp));
        r /= 2;
        c /= 2;
    }
}

/// In-place inverse of [`forward_plane`].
pub fn inverse_plane(plane: &mut [Complex64], rows: usize, cols: usize, levels: usize) {
    let mut tmp = vec![Complex64::default(); rows.max(cols)];
    for l in (0..levels).rev() {
        let r = rows >> l;
        let c = cols >> l;
        for_each_column(plane, cols, r, c, &mut |col| synthesize_1d(col, &mut tmp));
        for i in 0..r {
            synthesize_1d(&mut plane[i * cols..i * cols + c], &mut tmp);
        }
    }
}

/// Haar analysis of a single-coil image; the result has one coefficient per pixel.
pub fn haar_dwt2(img: &ComplexImage, levels: usize) -> Result<Vec<Complex64>> {
    let g = img.grid();
    if g.n_coils != 1 {
        return Err(Error::DimensionMismatch(format!(
            "expected a single-coil image, got {} coils",
            g.n_coils
        )));
    }
    check_levels(g.n_lines, g.n_readout, levels)?;
    let mut out = img.coil(0).to_vec();
    forward_plane(&mut out, g.n_lines, g.n_readout, levels);
    Ok(out)
}

/// Haar synthesis back onto the grid of `like`.
pub fn haar_idwt2(
    coeffs: &[Complex64],
    like: &ComplexImage,
    levels: usize,
) -> Result<ComplexImage> {
    let g = like.grid().with_coils(1);
    check_levels(g.n_lines, g.n_readout, levels)?;
    if coeffs.len() != g.plane_len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {:?}",
            coeffs.len(),
            g.shape()
        )));
    }
    let mut out = coeffs.to_vec();
    inverse_plane(&mut out, g.n_lines, g.n_readout, levels);
    ComplexImage::from_coil_major(g, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::GridSpec;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, m: usize, seed: u64) -> ComplexImage {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = GridSpec::new(n, m, 1).unwrap();
        ComplexImage::from_coil_major(
            g,
            (0..n * m)
                .map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_has_one_coarse_coefficient() {
        let g = GridSpec::new(8, 8, 1).unwrap();
        let mut img = ComplexImage::zeros(g);
        img.data_mut().fill(Complex64::new(2.0, 0.0));
        let c = haar_dwt2(&img, 3).unwrap();
        let nonzero: Vec<usize> = (0..c.len()).filter(|&i| c[i].norm() > 1e-12).collect();
        assert_eq!(nonzero, vec![0]);
        assert!((c[0].re - 2.0 * 8.0).abs() < 1e-12);
    }

    #[test]
    fn roundtrip_and_parseval() {
        let img = random(64, 64, 1);
        let c = haar_dwt2(&img, 3).unwrap();
        let cn = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!((cn / img.norm() - 1.0).abs() < 1e-6);
        let back = haar_idwt2(&c, &img, 3).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn non_square_roundtrip() {
        let img = random(16, 32, 2);
        let c = haar_dwt2(&img, 2).unwrap();
        let back = haar_idwt2(&c, &img, 2).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn indivisible_dims_rejected() {
        let img = random(12, 12, 3);
        assert!(haar_dwt2(&img, 3).is_err());
        assert!(haar_dwt2(&img, 2).is_ok());
    }
}
