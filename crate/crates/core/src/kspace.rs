//! Grid conventions, multi-coil complex arrays, masks and error metrics.

use std::ops::{Deref, DerefMut, Range};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

/// Discrete index space of one Cartesian acquisition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    /// Phase-encode lines (ky).
    pub n_lines: usize,
    /// Readout samples (kx).
    pub n_readout: usize,
    pub n_coils: usize,
}

impl GridSpec {
    pub fn new(n_lines: usize, n_readout: usize, n_coils: usize) -> Result<Self> {
        let grid = GridSpec {
            n_lines,
            n_readout,
            n_coils,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_lines == 0 || self.n_readout == 0 || self.n_coils == 0 {
            return Err(Error::InvalidGrid(format!(
                "all dimensions must be >= 1, got {self:?}"
            )));
        }
        if !self.n_lines.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "n_lines must be even, got {}",
                self.n_lines
            )));
        }
        Ok(())
    }

    pub fn with_coils(&self, n_coils: usize) -> GridSpec {
        GridSpec { n_coils, ..*self }
    }

    /// Samples in one coil plane.
    pub fn plane_len(&self) -> usize {
        self.n_lines * self.n_readout
    }

    pub fn len(&self) -> usize {
        self.plane_len() * self.n_coils
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_lines, self.n_readout, self.n_coils]
    }
}

/// Complex samples indexed by (line, readout, coil).
///
/// In memory each coil is a contiguous row-major (line, readout) plane so
/// that per-coil FFTs and line copies are cache friendly. Conversion to
/// and from the interleaved (line, readout, coil) order used on disk goes
/// through [`CoilArray::from_row_major`] and [`CoilArray::to_row_major`].
#[derive(Clone, Debug, PartialEq)]
pub struct CoilArray {
    grid: GridSpec,
    data: Vec<Complex64>,
}

impl CoilArray {
    pub fn zeros(grid: GridSpec) -> Self {
        CoilArray {
            grid,
            data: vec![Complex64::default(); grid.len()],
        }
    }

    /// Builds from coil-major storage (coil, line, readout).
    pub fn from_coil_major(grid: GridSpec, data: Vec<Complex64>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} samples for {:?}, got {}",
                grid.len(),
                grid.shape(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidGrid(
                "array contains non-finite samples".into(),
            ));
        }
        Ok(CoilArray { grid, data })
    }

    /// Builds from row-major (line, readout, coil) order, coil fastest.
    pub fn from_row_major(grid: GridSpec, data: &[Complex64]) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} samples for {:?}, got {}",
                grid.len(),
                grid.shape(),
                data.len()
            )));
        }
        let nc = grid.n_coils;
        let plane = grid.plane_len();
        let mut out = vec![Complex64::default(); grid.len()];
        for (p, chunk) in data.chunks_exact(nc).enumerate() {
            for (c, v) in chunk.iter().enumerate() {
                out[c * plane + p] = *v;
            }
        }
        Self::from_coil_major(grid, out)
    }

    pub fn to_row_major(&self) -> Vec<Complex64> {
        let nc = self.grid.n_coils;
        let mut out = vec![Complex64::default(); self.grid.len()];
        for c in 0..nc {
            for (p, v) in self.coil(c).iter().enumerate() {
                out[p * nc + c] = *v;
            }
        }
        out
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    fn offset(&self, line: usize, readout: usize, coil: usize) -> usize {
        coil * self.grid.plane_len() + line * self.grid.n_readout + readout
    }

    #[inline]
    pub fn get(&self, line: usize, readout: usize, coil: usize) -> Complex64 {
        self.data[self.offset(line, readout, coil)]
    }

    #[inline]
    pub fn set(&mut self, line: usize, readout: usize, coil: usize, value: Complex64) {
        let o = self.offset(line, readout, coil);
        self.data[o] = value;
    }

    pub fn coil(&self, coil: usize) -> &[Complex64] {
        let plane = self.grid.plane_len();
        &self.data[coil * plane..(coil + 1) * plane]
    }

    pub fn coil_mut(&mut self, coil: usize) -> &mut [Complex64] {
        let plane = self.grid.plane_len();
        &mut self.data[coil * plane..(coil + 1) * plane]
    }

    /// One readout line of one coil.
    pub fn line(&self, coil: usize, line: usize) -> &[Complex64] {
        let o = self.offset(line, 0, coil);
        &self.data[o..o + self.grid.n_readout]
    }

    pub fn line_mut(&mut self, coil: usize, line: usize) -> &mut [Complex64] {
        let o = self.offset(line, 0, coil);
        let n = self.grid.n_readout;
        &mut self.data[o..o + n]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn check_same_grid(&self, other: &CoilArray) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.grid.shape(),
                other.grid.shape()
            )));
        }
        Ok(())
    }
}

macro_rules! coil_array_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(CoilArray);

        impl $name {
            pub fn zeros(grid: GridSpec) -> Self {
                $name(CoilArray::zeros(grid))
            }

            pub fn from_coil_major(grid: GridSpec, data: Vec<Complex64>) -> Result<Self> {
                CoilArray::from_coil_major(grid, data).map($name)
            }

            pub fn from_row_major(grid: GridSpec, data: &[Complex64]) -> Result<Self> {
                CoilArray::from_row_major(grid, data).map($name)
            }

            pub fn into_inner(self) -> CoilArray {
                self.0
            }
        }

        impl From<CoilArray> for $name {
            fn from(a: CoilArray) -> Self {
                $name(a)
            }
        }

        impl Deref for $name {
            type Target = CoilArray;
            fn deref(&self) -> &CoilArray {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut CoilArray {
                &mut self.0
            }
        }
    };
}

coil_array_newtype!(
    /// Image-domain array: ground truth, pseudo-reconstruction or final reconstruction.
    ComplexImage
);
coil_array_newtype!(
    /// Multi-coil k-space samples.
    MultiCoilKspace
);

/// Set of acquired phase-encode lines.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMask")]
pub struct SamplingMask {
    n_lines: usize,
    sampled: Vec<usize>,
}

#[derive(Deserialize)]
struct RawMask {
    n_lines: usize,
    sampled: Vec<usize>,
}

impl TryFrom<RawMask> for SamplingMask {
    type Error = Error;
    fn try_from(raw: RawMask) -> Result<Self> {
        SamplingMask::new(raw.n_lines, raw.sampled)
    }
}

impl SamplingMask {
    /// Validates that `sampled` is strictly increasing, in range and nonempty.
    pub fn new(n_lines: usize, sampled: Vec<usize>) -> Result<Self> {
        if sampled.is_empty() {
            return Err(Error::InvalidMask(
                "mask must sample at least one line".into(),
            ));
        }
        if sampled.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMask(
                "line indices must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = sampled.last() {
            if last >= n_lines {
                return Err(Error::InvalidMask(format!(
                    "line {last} out of range for {n_lines} lines"
                )));
            }
        }
        Ok(SamplingMask { n_lines, sampled })
    }

    pub fn full(n_lines: usize) -> Self {
        SamplingMask {
            n_lines,
            sampled: (0..n_lines).collect(),
        }
    }

    pub fn from_indicator(indicator: &[bool]) -> Result<Self> {
        let sampled = indicator
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i)
            .collect();
        Self::new(indicator.len(), sampled)
    }

    pub fn indicator(&self) -> Vec<bool> {
        let mut out = vec![false; self.n_lines];
        for &i in &self.sampled {
            out[i] = true;
        }
        out
    }

    pub fn n_lines(&self) -> usize {
        self.n_lines
    }

    pub fn sampled(&self) -> &[usize] {
        &self.sampled
    }

    pub fn len(&self) -> usize {
        self.sampled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sampled.is_empty()
    }

    pub fn contains(&self, line: usize) -> bool {
        self.sampled.binary_search(&line).is_ok()
    }

    /// Reduction factor n_lines / |sampled|.
    pub fn reduction(&self) -> f64 {
        self.n_lines as f64 / self.sampled.len() as f64
    }
}

/// Contiguous, fully sampled calibration band centered on k-space line `n_lines / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AcsSpec {
    pub width: usize,
}

impl AcsSpec {
    pub fn new(width: usize) -> Result<Self> {
        if !width.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "ACS width must be even, got {width}"
            )));
        }
        Ok(AcsSpec { width })
    }

    pub fn validate_for(&self, n_lines: usize) -> Result<()> {
        if !self.width.is_multiple_of(2) || self.width > n_lines {
            return Err(Error::InvalidConfig(format!(
                "ACS width {} invalid for {n_lines} lines",
                self.width
            )));
        }
        Ok(())
    }

    pub fn lines(&self, n_lines: usize) -> Range<usize> {
        let c = n_lines / 2;
        let h = self.width / 2;
        (c - h)..(c + h)
    }
}

/// Per-coil centered unitary 2D DFT.
pub fn fft2_centered(img: &ComplexImage) -> MultiCoilKspace {
    MultiCoilKspace(transform_coils(img, false))
}

/// Inverse of [`fft2_centered`].
pub fn ifft2_centered(ksp: &MultiCoilKspace) -> ComplexImage {
    ComplexImage(transform_coils(ksp, true))
}

fn transform_coils(src: &CoilArray, inverse: bool) -> CoilArray {
    let mut out = src.clone();
    let g = out.grid;
    let mut scratch = vec![Complex64::default(); g.plane_len()];
    for c in 0..g.n_coils {
        fft::fft2c_plane_with(
            out.coil_mut(c),
            g.n_lines,
            g.n_readout,
            inverse,
            &mut scratch,
        );
    }
    out
}

/// Zeroes every line not in `mask`.
pub fn apply_mask(ksp: &MultiCoilKspace, mask: &SamplingMask) -> Result<MultiCoilKspace> {
    let g = ksp.grid();
    if mask.n_lines() != g.n_lines {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} lines, k-space has {}",
            mask.n_lines(),
            g.n_lines
        )));
    }
    let keep = mask.indicator();
    let mut out = ksp.clone();
    for c in 0..g.n_coils {
        for (l, &k) in keep.iter().enumerate() {
            if !k {
                out.line_mut(c, l).fill(Complex64::default());
            }
        }
    }
    Ok(out)
}

/// Root-sum-of-squares coil combination; the result is real and single-coil.
pub fn sos_combine(img: &ComplexImage) -> ComplexImage {
    let g = img.grid();
    let mut acc = vec![0.0f64; g.plane_len()];
    for c in 0..g.n_coils {
        for (a, v) in acc.iter_mut().zip(img.coil(c)) {
            *a += v.norm_sqr();
        }
    }
    let data = acc
        .into_iter()
        .map(|a| Complex64::new(a.sqrt(), 0.0))
        .collect();
    ComplexImage(CoilArray {
        grid: g.with_coils(1),
        data,
    })
}

/// How [`nrmse_with`] compares pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    #[default]
    Complex,
    Magnitude,
}

/// ‖candidate − reference‖₂ / ‖reference‖₂ over all pixels, on complex values.
pub fn nrmse(candidate: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    nrmse_with(candidate, reference, None, ErrorMode::Complex)
}

/// NRMSE restricted to `roi` (a per-pixel selector over the plane) if given.
pub fn nrmse_with(
    candidate: &ComplexImage,
    reference: &ComplexImage,
    roi: Option<&[bool]>,
    mode: ErrorMode,
) -> Result<f64> {
    candidate.check_same_grid(reference)?;
    let g = reference.grid();
    if let Some(r) = roi {
        if r.len() != g.plane_len() {
            return Err(Error::DimensionMismatch(format!(
                "roi has {} pixels, image plane has {}",
                r.len(),
                g.plane_len()
            )));
        }
    }
    let plane = g.plane_len();
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, (a, b)) in candidate.data().iter().zip(reference.data()).enumerate() {
        if let Some(r) = roi {
            if !r[idx % plane] {
                continue;
            }
        }
        match mode {
            ErrorMode::Complex => {
                num += (a - b).norm_sqr();
                den += b.norm_sqr();
            }
            ErrorMode::Magnitude => {
                let d = a.norm() - b.norm();
                num += d * d;
                den += b.norm_sqr();
            }
        }
    }
    if den <= 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((num / den).sqrt())
}

/// Per-pixel |candidate − reference|, summed over coils in quadrature.
pub fn error_map(candidate: &ComplexImage, reference: &ComplexImage) -> Result<ComplexImage> {
    candidate.check_same_grid(reference)?;
    let g = reference.grid();
    let mut acc = vec![0.0f64; g.plane_len()];
    for c in 0..g.n_coils {
        for ((e, a), b) in acc.iter_mut().zip(candidate.coil(c)).zip(reference.coil(c)) {
            *e += (a - b).norm_sqr();
        }
    }
    let data = acc
        .into_iter()
        .map(|e| Complex64::new(e.sqrt(), 0.0))
        .collect();
    Ok(ComplexImage(CoilArray {
        grid: g.with_coils(1),
        data,
    }))
}
