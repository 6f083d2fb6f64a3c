//! Reference PI+CS reconstruction and trajectory scoring.
//!
//! The solver runs monotone FISTA on `½‖U F S x − y‖² + λ‖W x‖₁` with a Haar
//! `W`. Because `U` only selects phase-encode lines, `Fᴴ U F` reduces to a
//! transform along ky, so all iterates live in a transposed (readout, line)
//! layout where ky is contiguous and the readout transform is applied once to
//! the data up front.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fft;
use crate::io;
use crate::kspace::{
    apply_mask, error_map, ifft2_centered, nrmse_with, sos_combine, AcsSpec, ComplexImage,
    ErrorMode, GridSpec, MultiCoilKspace, SamplingMask,
};
use crate::wavelet;

/// Minimum ACS width accepted by [`estimate_sensitivities`].
pub const MIN_SENSITIVITY_ACS: usize = 8;

/// l1 weight, either absolute or relative to max |zero-filled image|.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lambda {
    Relative(f64),
    Absolute(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub lambda: Lambda,
    pub n_fista_iterations: usize,
    pub wavelet_levels: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            lambda: Lambda::Relative(1e-3),
            n_fista_iterations: 60,
            wavelet_levels: 3,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self, grid: GridSpec) -> Result<()> {
        let l = match self.lambda {
            Lambda::Relative(v) | Lambda::Absolute(v) => v,
        };
        if !(l.is_finite() && l >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {l}"
            )));
        }
        if self.n_fista_iterations == 0 {
            return Err(Error::InvalidConfig(
                "n_fista_iterations must be positive".into(),
            ));
        }
        if self.wavelet_levels == 0 {
            return Err(Error::InvalidConfig(
                "wavelet_levels must be positive".into(),
            ));
        }
        wavelet::check_levels(grid.n_lines, grid.n_readout, self.wavelet_levels)
    }

    /// Hex sha256 of the canonical JSON form; equal configs hash equally.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hann(width: usize) -> Vec<f64> {
    (0..width)
        .map(|j| {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * (j + 1) as f64 / (width + 1) as f64).cos())
        })
        .collect()
}

/// Coil sensitivities from the Hann-windowed ACS band, normalized so the
/// per-pixel sum of squares is 1 (or 0 where the low-resolution signal vanishes).
pub fn estimate_sensitivities(ksp: &MultiCoilKspace, acs: &AcsSpec) -> Result<ComplexImage> {
    let g = ksp.grid();
    if acs.width < MIN_SENSITIVITY_ACS {
        return Err(Error::InvalidConfig(format!(
            "sensitivity estimation needs acs width >= {MIN_SENSITIVITY_ACS}, got {}",
            acs.width
        )));
    }
    acs.validate_for(g.n_lines)?;
    let band = acs.lines(g.n_lines);
    let window = hann(acs.width);
    let mut low = MultiCoilKspace::zeros(g);
    for c in 0..g.n_coils {
        for (j, l) in band.clone().enumerate() {
            for (o, v) in low.line_mut(c, l).iter_mut().zip(ksp.line(c, l)) {
                *o = v * window[j];
            }
        }
    }
    let mut sens = ifft2_centered(&low);
    let sos = sos_combine(&sens);
    let max = sos.data().iter().map(|v| v.re).fold(0.0, f64::max);
    let floor = 1e-6 * max;
    for c in 0..g.n_coils {
        let coil = sens.coil_mut(c);
        for (v, s) in coil.iter_mut().zip(sos.data()) {
            *v = if s.re > floor && s.re > 0.0 {
                *v / s.re
            } else {
                Complex64::default()
            };
        }
    }
    Ok(sens)
}

/// The normal operator `Sᴴ Fᴴ U F S` and its pieces, in the transposed layout.
struct SenseOperator {
    n_lines: usize,
    n_readout: usize,
    n_coils: usize,
    /// Sensitivities, transposed per coil.
    sens: Vec<Complex64>,
    /// Indicator over ky.
    sampled: Vec<bool>,
}

impl SenseOperator {
    fn new(sens: &ComplexImage, mask: &SamplingMask) -> Self {
        let g = sens.grid();
        let plane = g.plane_len();
        let mut t = vec![Complex64::default(); g.len()];
        for c in 0..g.n_coils {
            fft::transpose(
                sens.coil(c),
                g.n_lines,
                g.n_readout,
                &mut t[c * plane..(c + 1) * plane],
            );
        }
        SenseOperator {
            n_lines: g.n_lines,
            n_readout: g.n_readout,
            n_coils: g.n_coils,
            sens: t,
            sampled: mask.indicator(),
        }
    }

    fn plane(&self) -> usize {
        self.n_lines * self.n_readout
    }

    /// Returns `Aᴴ A x` in `out` and `½‖A x − y‖²`, with `y` in hybrid transposed form.
    fn normal(
        &self,
        x: &[Complex64],
        y: &[Complex64],
        out: &mut [Complex64],
        buf: &mut [Complex64],
    ) -> f64 {
        let plane = self.plane();
        out.fill(Complex64::default());
        let mut data = 0.0;
        for c in 0..self.n_coils {
            let s = &self.sens[c * plane..(c + 1) * plane];
            let yc = &y[c * plane..(c + 1) * plane];
            for ((b, si), xi) in buf.iter_mut().zip(s).zip(x) {
                *b = si * xi;
            }
            fft::fft1c_rows(buf, self.n_lines, false);
            for (p, (b, yv)) in buf.iter_mut().zip(yc).enumerate() {
                if self.sampled[p % self.n_lines] {
                    data += (*b - yv).norm_sqr();
                } else {
                    *b = Complex64::default();
                }
            }
            fft::fft1c_rows(buf, self.n_lines, true);
            for ((o, si), b) in out.iter_mut().zip(s).zip(buf.iter()) {
                *o += si.conj() * b;
            }
        }
        0.5 * data
    }

    /// `Aᴴ y` for hybrid transposed `y`.
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let plane = self.plane();
        let mut out = vec![Complex64::default(); plane];
        let mut buf = vec![Complex64::default(); plane];
        for c in 0..self.n_coils {
            buf.copy_from_slice(&y[c * plane..(c + 1) * plane]);
            fft::fft1c_rows(&mut buf, self.n_lines, true);
            for ((o, si), b) in out
                .iter_mut()
                .zip(&self.sens[c * plane..(c + 1) * plane])
                .zip(&buf)
            {
                *o += si.conj() * b;
            }
        }
        out
    }
}

/// Masked k-space → readout-inverse-transformed, transposed per coil.
fn hybrid_data(y: &MultiCoilKspace, mask: &SamplingMask) -> Result<Vec<Complex64>> {
    let masked = apply_mask(y, mask)?;
    let g = y.grid();
    let plane = g.plane_len();
    let mut rows = masked.into_inner().into_data();
    fft::fft1c_rows(&mut rows, g.n_readout, true);
    let mut out = vec![Complex64::default(); g.len()];
    for c in 0..g.n_coils {
        fft::transpose(
            &rows[c * plane..(c + 1) * plane],
            g.n_lines,
            g.n_readout,
            &mut out[c * plane..(c + 1) * plane],
        );
    }
    Ok(out)
}

fn soft_threshold(coeffs: &mut [Complex64], t: f64) {
    for c in coeffs {
        let m = c.norm();
        *c = if m > t {
            *c * (1.0 - t / m)
        } else {
            Complex64::default()
        };
    }
}

fn l1(coeffs: &[Complex64]) -> f64 {
    coeffs.iter().map(|c| c.norm()).sum()
}

#[derive(Clone, Debug)]
pub struct PicsOutput {
    pub image: ComplexImage,
    /// Objective value at the iterate kept after each iteration, starting with x = 0.
    pub objective: Vec<f64>,
    pub lambda: f64,
}

fn check_inputs(
    y: &MultiCoilKspace,
    mask: &SamplingMask,
    sens: &ComplexImage,
    cfg: &ReconConfig,
) -> Result<()> {
    let g = y.grid();
    if sens.grid() != g {
        return Err(Error::DimensionMismatch(format!(
            "sensitivities {:?} do not match k-space {:?}",
            sens.grid().shape(),
            g.shape()
        )));
    }
    if mask.n_lines() != g.n_lines {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} lines, k-space has {}",
            mask.n_lines(),
            g.n_lines
        )));
    }
    if mask.is_empty() {
        return Err(Error::InvalidMask("mask samples no lines".into()));
    }
    cfg.validate(g)
}

/// PI+CS reconstruction, returning the image together with the objective trace.
pub fn pics_reconstruct_traced(
    y: &MultiCoilKspace,
    mask: &SamplingMask,
    sens: &ComplexImage,
    cfg: &ReconConfig,
) -> Result<PicsOutput> {
    check_inputs(y, mask, sens, cfg)?;
    let g = y.grid();
    let (nro, nl) = (g.n_readout, g.n_lines);
    let levels = cfg.wavelet_levels;
    let op = SenseOperator::new(sens, mask);
    let yh = hybrid_data(y, mask)?;
    let aty = op.adjoint(&yh);
    let lambda = match cfg.lambda {
        Lambda::Absolute(v) => v,
        Lambda::Relative(v) => v * aty.iter().map(|c| c.norm()).fold(0.0, f64::max),
    };
    let plane = op.plane();
    let zero = vec![Complex64::default(); plane];
    let mut buf = vec![Complex64::default(); plane];

    let mut x = zero.clone();
    let mut gx = zero.clone();
    let mut v = zero.clone();
    let mut gv = zero.clone();
    let mut z = zero.clone();
    let mut gz = zero;
    let mut fx = 0.5 * yh.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let mut t = 1.0f64;
    let mut objective = Vec::with_capacity(cfg.n_fista_iterations + 1);
    objective.push(fx);

    for _ in 0..cfg.n_fista_iterations {
        for i in 0..plane {
            z[i] = v[i] - (gv[i] - aty[i]);
        }
        wavelet::forward_plane(&mut z, nro, nl, levels);
        soft_threshold(&mut z, lambda);
        let reg = lambda * l1(&z);
        wavelet::inverse_plane(&mut z, nro, nl, levels);
        let fz = op.normal(&z, &yh, &mut gz, &mut buf) + reg;

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let a = t / t_next;
        let b = (t - 1.0) / t_next;
        if fz <= fx {
            // x_{k+1} = z, so v = z + b (z − x_k).
            for i in 0..plane {
                v[i] = z[i] + b * (z[i] - x[i]);
                gv[i] = gz[i] + b * (gz[i] - gx[i]);
            }
            std::mem::swap(&mut x, &mut z);
            std::mem::swap(&mut gx, &mut gz);
            fx = fz;
        } else {
            // x_{k+1} = x_k, so v = x_k + a (z − x_k).
            for i in 0..plane {
                v[i] = x[i] + a * (z[i] - x[i]);
                gv[i] = gx[i] + a * (gz[i] - gx[i]);
            }
        }
        t = t_next;
        objective.push(fx);
    }

    let mut img = vec![Complex64::default(); plane];
    fft::transpose(&x, nro, nl, &mut img);
    Ok(PicsOutput {
        image: ComplexImage::from_coil_major(g.with_coils(1), img)?,
        objective,
        lambda,
    })
}

pub fn pics_reconstruct(
    y: &MultiCoilKspace,
    mask: &SamplingMask,
    sens: &ComplexImage,
    cfg: &ReconConfig,
) -> Result<ComplexImage> {
    Ok(pics_reconstruct_traced(y, mask, sens, cfg)?.image)
}

/// `Σ_c conj(S_c) · coil_c`, the image a full-mask least-squares solve returns.
pub fn sensitivity_combine(coils: &ComplexImage, sens: &ComplexImage) -> Result<ComplexImage> {
    coils.check_same_grid(sens)?;
    let g = coils.grid();
    let mut out = vec![Complex64::default(); g.plane_len()];
    for c in 0..g.n_coils {
        for ((o, s), v) in out.iter_mut().zip(sens.coil(c)).zip(coils.coil(c)) {
            *o += s.conj() * v;
        }
    }
    ComplexImage::from_coil_major(g.with_coils(1), out)
}

/// Power-iteration estimate of ‖U F S‖₂ (square root of the top eigenvalue of the normal operator).
pub fn operator_norm_estimate(
    sens: &ComplexImage,
    mask: &SamplingMask,
    iterations: usize,
    seed: u64,
) -> Result<f64> {
    use rand::Rng;
    let g = sens.grid();
    if mask.n_lines() != g.n_lines {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} lines, grid has {}",
            mask.n_lines(),
            g.n_lines
        )));
    }
    let op = SenseOperator::new(sens, mask);
    let plane = op.plane();
    let mut r = crate::rng::stream(seed, &[]);
    let mut x: Vec<Complex64> = (0..plane)
        .map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
        .collect();
    let zeros = vec![Complex64::default(); g.len()];
    let mut out = vec![Complex64::default(); plane];
    let mut buf = vec![Complex64::default(); plane];
    let mut eig = 0.0;
    for _ in 0..iterations {
        let n = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if n == 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().for_each(|c| *c /= n);
        op.normal(&x, &zeros, &mut out, &mut buf);
        eig = x
            .iter()
            .zip(&out)
            .map(|(a, b)| (a.conj() * b).re)
            .sum::<f64>();
        std::mem::swap(&mut x, &mut out);
    }
    Ok(eig.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mask_name: String,
    pub nrmse: f64,
    pub error_map_path: String,
    pub recon_path: String,
    pub runtime_seconds: f64,
    /// Hash of the recon config and ACS used, for fairness checks across masks.
    pub config_hash: String,
}

/// Where [`evaluate_trajectory`] writes its artifacts.
#[derive(Clone, Debug)]
pub struct ArtifactSink {
    pub dir: PathBuf,
    pub mask_name: String,
}

/// Outcome of [`score_trajectory`] before anything is written.
#[derive(Clone, Debug)]
pub struct Scored {
    /// Magnitude of the reconstruction.
    pub recon: ComplexImage,
    pub error_map: ComplexImage,
    pub nrmse: f64,
    pub runtime_seconds: f64,
}

/// Root-sum-of-squares image of fully sampled data.
pub fn sos_truth(dataset: &MultiCoilKspace) -> ComplexImage {
    sos_combine(&ifft2_centered(dataset))
}

fn magnitude(img: &ComplexImage) -> ComplexImage {
    let data = img
        .data()
        .iter()
        .map(|v| Complex64::new(v.norm(), 0.0))
        .collect();
    ComplexImage::from_coil_major(img.grid(), data).expect("same grid")
}

/// Masks the data, reconstructs, and scores the magnitude against the sos truth.
pub fn score_trajectory(
    dataset: &MultiCoilKspace,
    mask: &SamplingMask,
    acs: &AcsSpec,
    cfg: &ReconConfig,
) -> Result<Scored> {
    let start = Instant::now();
    let g = dataset.grid();
    acs.validate_for(g.n_lines)?;
    if acs.lines(g.n_lines).any(|l| !mask.contains(l)) {
        return Err(Error::InvalidMask(
            "mask does not contain the ACS band".into(),
        ));
    }
    let y = apply_mask(dataset, mask)?;
    let sens = estimate_sensitivities(&y, acs)?;
    let recon = magnitude(&pics_reconstruct(&y, mask, &sens, cfg)?);
    let truth = sos_truth(dataset);
    let nrmse = nrmse_with(&recon, &truth, None, ErrorMode::Magnitude)?;
    let error_map = error_map(&recon, &truth)?;
    Ok(Scored {
        recon,
        error_map,
        nrmse,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

fn config_hash(cfg: &ReconConfig, acs: &AcsSpec) -> String {
    let json = serde_json::to_vec(&(cfg, acs.width)).expect("config serializes");
    hex(&Sha256::digest(json))
}

/// Scores a mask and writes the recon and error map (binary arrays plus PGM).
pub fn evaluate_trajectory(
    dataset: &MultiCoilKspace,
    mask: &SamplingMask,
    acs: &AcsSpec,
    cfg: &ReconConfig,
    sink: &ArtifactSink,
) -> Result<EvaluationReport> {
    let scored = score_trajectory(dataset, mask, acs, cfg)?;
    std::fs::create_dir_all(&sink.dir)?;
    let g = dataset.grid();
    let recon_stem = sink.dir.join(format!("{}_recon", sink.mask_name));
    let err_stem = sink.dir.join(format!("{}_error", sink.mask_name));
    io::write_array(&recon_stem, &scored.recon)?;
    io::write_array(&err_stem, &scored.error_map)?;
    let re = |img: &ComplexImage| img.data().iter().map(|v| v.re).collect::<Vec<_>>();
    io::write_pgm(
        &recon_stem.with_extension("pgm"),
        &re(&scored.recon),
        g.n_lines,
        g.n_readout,
    )?;
    io::write_pgm(
        &err_stem.with_extension("pgm"),
        &re(&scored.error_map),
        g.n_lines,
        g.n_readout,
    )?;
    Ok(EvaluationReport {
        mask_name: sink.mask_name.clone(),
        nrmse: scored.nrmse,
        error_map_path: err_stem.display().to_string(),
        recon_path: recon_stem.display().to_string(),
        runtime_seconds: scored.runtime_seconds,
        config_hash: config_hash(cfg, acs),
    })
}

/// Appends `mask_name,R,nrmse,runtime_seconds` to `path`, writing the header for a new file.
pub fn append_report(path: &Path, report: &EvaluationReport, reduction: f64) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "mask_name,R,nrmse,runtime_seconds")?;
    }
    writeln!(
        f,
        "{},{},{:e},{:.6}",
        report.mask_name, reduction, report.nrmse, report.runtime_seconds
    )?;
    Ok(())
}
