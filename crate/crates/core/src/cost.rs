//! Surrogate reconstruction error of a mask, and the PSF sidelobe metric.
//!
//! The surrogate is the count-normalized L_p norm of `Φ(x − x(u))`, where
//! `x` is the coil-combined reference image and `x(u)` the coil-combined
//! GRAPPA pseudo-reconstruction for mask `u`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::grappa::{self, fill_plan, GrappaExtrapolationTable, LineSource};
use crate::kspace::{
    ifft2_centered, sos_combine, AcsSpec, ComplexImage, MultiCoilKspace, SamplingMask,
};
use crate::wavelet;

/// Sparsifying transform Φ applied to the error image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorTransform {
    #[default]
    Identity,
    #[serde(rename = "wavelet-haar-2level")]
    WaveletHaar2Level,
}

impl ErrorTransform {
    fn levels(self) -> usize {
        match self {
            ErrorTransform::Identity => 0,
            ErrorTransform::WaveletHaar2Level => 2,
        }
    }
}

/// How coils are merged before the error is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoilCombine {
    #[default]
    Sos,
    PerCoil,
}

/// L_p exponent; `p = ∞` is the max norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormExponent(f64);

impl NormExponent {
    pub const INFINITY: NormExponent = NormExponent(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 2.0 {
            return Err(Error::InvalidConfig(format!(
                "p must be >= 2 or infinite, got {p}"
            )));
        }
        Ok(NormExponent(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for NormExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for NormExponent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" => Ok(NormExponent::INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("bad exponent {s:?}: {e}")))
                .and_then(NormExponent::new),
        }
    }
}

impl Serialize for NormExponent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for NormExponent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => NormExponent::new(p).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub p: NormExponent,
    pub transform: ErrorTransform,
    pub combine: CoilCombine,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            p: NormExponent(8.0),
            transform: ErrorTransform::Identity,
            combine: CoilCombine::Sos,
        }
    }
}

/// Everything the surrogate needs, built once per reference dataset and
/// shared read-only across concurrent evaluations.
pub struct CostContext {
    reference: MultiCoilKspace,
    /// Coil-combined (or per-coil, for [`CoilCombine::PerCoil`]) reference image.
    ground_truth: ComplexImage,
    table: Arc<GrappaExtrapolationTable>,
    config: CostConfig,
    // Readout-transformed copies of the reference and table so an evaluation only
    // needs the phase-encode transform. Same layout as their sources.
    hybrid_reference: Vec<Complex64>,
    hybrid_table: GrappaExtrapolationTable,
    // Ground truth transposed to (readout, line), matching the fast path's layout.
    truth_transposed: Vec<Complex64>,
}

impl CostContext {
    /// Calibrates the extrapolation table (one [`grappa::build_table`] call) and prepares the context.
    pub fn build(
        reference: MultiCoilKspace,
        calibration: &AcsSpec,
        d_max: usize,
        kx_window: usize,
        config: CostConfig,
    ) -> Result<Self> {
        let table = grappa::build_table(&reference, calibration, d_max, kx_window)?;
        Self::from_table(reference, Arc::new(table), config)
    }

    pub fn from_table(
        reference: MultiCoilKspace,
        table: Arc<GrappaExtrapolationTable>,
        config: CostConfig,
    ) -> Result<Self> {
        let g = reference.grid();
        if table.grid() != g {
            return Err(Error::DimensionMismatch(format!(
                "table {:?} vs reference {:?}",
                table.grid().shape(),
                g.shape()
            )));
        }
        wavelet::check_levels(g.n_lines, g.n_readout, config.transform.levels())?;
        let coil_images = ifft2_centered(&reference);
        let ground_truth = match config.combine {
            CoilCombine::Sos => sos_combine(&coil_images),
            CoilCombine::PerCoil => coil_images,
        };

        let mut hybrid_reference = reference.data().to_vec();
        fft::fft1c_rows(&mut hybrid_reference, g.n_readout, true);
        let mut hybrid_table = (*table).clone();
        hybrid_table.transform_readout_inverse();

        let gg = ground_truth.grid();
        let mut truth_transposed = vec![Complex64::default(); gg.len()];
        for c in 0..gg.n_coils {
            let plane = gg.plane_len();
            fft::transpose(
                ground_truth.coil(c),
                g.n_lines,
                g.n_readout,
                &mut truth_transposed[c * plane..(c + 1) * plane],
            );
        }

        Ok(CostContext {
            reference,
            ground_truth,
            table,
            config,
            hybrid_reference,
            hybrid_table,
            truth_transposed,
        })
    }

    pub fn reference(&self) -> &MultiCoilKspace {
        &self.reference
    }

    pub fn ground_truth(&self) -> &ComplexImage {
        &self.ground_truth
    }

    pub fn table(&self) -> &GrappaExtrapolationTable {
        &self.table
    }

    pub fn config(&self) -> &CostConfig {
        &self.config
    }

    fn check_mask(&self, mask: &SamplingMask) -> Result<()> {
        let n = self.reference.grid().n_lines;
        if mask.n_lines() != n {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} lines, context has {n}",
                mask.n_lines()
            )));
        }
        if mask.is_empty() {
            return Err(Error::InvalidMask("empty mask".into()));
        }
        Ok(())
    }
}

impl GrappaExtrapolationTable {
    fn transform_readout_inverse(&mut self) {
        let n = self.grid().n_readout;
        fft::fft1c_rows(self.data_mut(), n, true);
    }
}

/// Count-normalized L_p norm of `Φ(x − x(u))`.
///
/// Evaluated in hybrid (line, x) space: the readout transform of every line the
/// pseudo-reconstruction can contain is precomputed in the context, so an
/// evaluation assembles lines and runs only the phase-encode transform. The
/// result equals [`surrogate_cost_direct`] up to floating-point rounding.
pub fn surrogate_cost(mask: &SamplingMask, ctx: &CostContext) -> Result<f64> {
    ctx.check_mask(mask)?;
    let g = ctx.reference.grid();
    let (nl, nro) = (g.n_lines, g.n_readout);
    let plane = g.plane_len();
    let plan = fill_plan(mask, ctx.hybrid_table.d_max());

    let mut buf = vec![Complex64::default(); plane];
    let out_coils = ctx.ground_truth.grid().n_coils;
    let mut combined = vec![0.0f64; if out_coils == 1 { plane } else { 0 }];
    let mut error = vec![Complex64::default(); out_coils * plane];

    for c in 0..g.n_coils {
        for (j, src) in plan.iter().enumerate() {
            let row: Option<&[Complex64]> = match *src {
                LineSource::Sampled => {
                    Some(&ctx.hybrid_reference[c * plane + j * nro..c * plane + (j + 1) * nro])
                }
                LineSource::Extrapolated { source, shift } => ctx
                    .hybrid_table
                    .entry(source, shift)
                    .map(|e| &e[c * nro..(c + 1) * nro]),
                LineSource::Zero => None,
            };
            match row {
                Some(r) => {
                    for (x, v) in r.iter().enumerate() {
                        buf[x * nl + j] = *v;
                    }
                }
                None => {
                    for x in 0..nro {
                        buf[x * nl + j] = Complex64::default();
                    }
                }
            }
        }
        fft::fft1c_rows(&mut buf, nl, true);
        match ctx.config.combine {
            CoilCombine::Sos => {
                for (a, v) in combined.iter_mut().zip(&buf) {
                    *a += v.norm_sqr();
                }
            }
            CoilCombine::PerCoil => {
                let truth = &ctx.truth_transposed[c * plane..(c + 1) * plane];
                for ((e, t), v) in error[c * plane..(c + 1) * plane]
                    .iter_mut()
                    .zip(truth)
                    .zip(&buf)
                {
                    *e = t - v;
                }
            }
        }
    }
    if ctx.config.combine == CoilCombine::Sos {
        for ((e, t), a) in error.iter_mut().zip(&ctx.truth_transposed).zip(&combined) {
            *e = t - Complex64::new(a.sqrt(), 0.0);
        }
    }
    // Transposed planes: the separable Haar transform commutes with transposition
    // up to a coefficient permutation, which the norm ignores.
    Ok(transformed_norm(
        &mut error,
        out_coils,
        nro,
        nl,
        &ctx.config,
    ))
}

/// Literal evaluation: pseudo-reconstruct, inverse 2D FFT, combine, transform, norm.
pub fn surrogate_cost_direct(mask: &SamplingMask, ctx: &CostContext) -> Result<f64> {
    ctx.check_mask(mask)?;
    let ksp = grappa::pseudo_reconstruct(mask, &ctx.reference, &ctx.table)?;
    let coil_images = ifft2_centered(&ksp);
    let estimate = match ctx.config.combine {
        CoilCombine::Sos => sos_combine(&coil_images),
        CoilCombine::PerCoil => coil_images,
    };
    let g = estimate.grid();
    let mut error: Vec<Complex64> = ctx
        .ground_truth
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(t, v)| t - v)
        .collect();
    Ok(transformed_norm(
        &mut error,
        g.n_coils,
        g.n_lines,
        g.n_readout,
        &ctx.config,
    ))
}

fn transformed_norm(
    error: &mut [Complex64],
    n_planes: usize,
    rows: usize,
    cols: usize,
    cfg: &CostConfig,
) -> f64 {
    let levels = cfg.transform.levels();
    if levels > 0 {
        for plane in error.chunks_exact_mut(rows * cols).take(n_planes) {
            wavelet::forward_plane(plane, rows, cols, levels);
        }
    }
    normalized_lp(error.iter().map(|v| v.norm()), error.len(), cfg.p)
}

/// `(Σ|e|^p / count)^(1/p)`, or `max |e|` for infinite `p`.
pub fn normalized_lp(
    values: impl Iterator<Item = f64> + Clone,
    count: usize,
    p: NormExponent,
) -> f64 {
    let max = values.clone().fold(0.0, f64::max);
    if p.is_infinite() || max == 0.0 || count == 0 {
        return max;
    }
    let p = p.value();
    let sum: f64 = values.map(|v| (v / max).powf(p)).sum();
    max * (sum / count as f64).powf(1.0 / p)
}

/// Peak sidelobe of the mask's point-spread function relative to its main lobe.
pub fn psf_sidelobe(mask: &SamplingMask) -> f64 {
    let n = mask.n_lines();
    let mut psf: Vec<Complex64> = mask
        .indicator()
        .into_iter()
        .map(|s| Complex64::new(if s { 1.0 } else { 0.0 }, 0.0))
        .collect();
    fft::fft1c_rows(&mut psf, n, true);
    let center = n / 2;
    let peak = psf[center].norm();
    let side = psf
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != center)
        .map(|(_, v)| v.norm())
        .fold(0.0, f64::max);
    if peak > 0.0 {
        side / peak
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::GridSpec;
    use crate::phantom::{generate_dataset, CoilModel, PhantomSpec};
    use crate::testing::shift_consistent_kspace;
    use crate::trajectories::{uniform_mask, variable_density_mask, TrajectoryBudget};

    fn small_context(config: CostConfig) -> CostContext {
        let spec = PhantomSpec::with_contrasts(GridSpec::new(64, 64, 4).unwrap(), 1, 0.0, 1);
        let ds = generate_dataset(&spec, &CoilModel::ring(4, 0.6)).unwrap();
        CostContext::build(ds.kspaces[0].clone(), &AcsSpec { width: 16 }, 3, 3, config).unwrap()
    }

    #[test]
    fn exponent_parsing() {
        assert!(NormExponent::new(1.5).is_err());
        assert!("inf".parse::<NormExponent>().unwrap().is_infinite());
        assert_eq!("8".parse::<NormExponent>().unwrap().value(), 8.0);
        let c: CostConfig = serde_json::from_str(
            r#"{"p":"inf","transform":"wavelet-haar-2level","combine":"per-coil"}"#,
        )
        .unwrap();
        assert_eq!(c.transform, ErrorTransform::WaveletHaar2Level);
        assert!(c.p.is_infinite());
        assert_eq!(c.combine, CoilCombine::PerCoil);
    }

    #[test]
    fn full_mask_costs_nothing() {
        for combine in [CoilCombine::Sos, CoilCombine::PerCoil] {
            for transform in [ErrorTransform::Identity, ErrorTransform::WaveletHaar2Level] {
                let ctx = small_context(CostConfig {
                    combine,
                    transform,
                    ..Default::default()
                });
                assert!(surrogate_cost(&SamplingMask::full(64), &ctx).unwrap() <= 1e-6);
            }
        }
    }

    #[test]
    fn fast_path_matches_direct_evaluation() {
        for combine in [CoilCombine::Sos, CoilCombine::PerCoil] {
            for transform in [ErrorTransform::Identity, ErrorTransform::WaveletHaar2Level] {
                for p in [NormExponent(2.0), NormExponent(8.0), NormExponent::INFINITY] {
                    let ctx = small_context(CostConfig {
                        p,
                        combine,
                        transform,
                    });
                    let b = TrajectoryBudget::new(64, 4.0, AcsSpec { width: 8 }).unwrap();
                    for seed in 0..3 {
                        let m = variable_density_mask(&b, 1.0, seed).unwrap();
                        let fast = surrogate_cost(&m, &ctx).unwrap();
                        let direct = surrogate_cost_direct(&m, &ctx).unwrap();
                        assert!(
                            (fast - direct).abs() <= 1e-10 * direct.max(1e-12),
                            "{fast} vs {direct}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn cost_is_deterministic() {
        let ctx = small_context(CostConfig::default());
        let b = TrajectoryBudget::new(64, 4.0, AcsSpec { width: 8 }).unwrap();
        let m = uniform_mask(&b);
        assert_eq!(
            surrogate_cost(&m, &ctx).unwrap(),
            surrogate_cost(&m, &ctx).unwrap()
        );
    }

    #[test]
    fn exact_on_consistent_data() {
        let data = shift_consistent_kspace(GridSpec::new(32, 16, 4).unwrap(), 5);
        let ctx = CostContext::build(
            data.kspace,
            &AcsSpec { width: 12 },
            3,
            1,
            CostConfig::default(),
        )
        .unwrap();
        let m = SamplingMask::new(32, vec![1, 4, 7, 10, 12, 15, 16, 19, 22, 25, 28, 30]).unwrap();
        assert!(surrogate_cost(&m, &ctx).unwrap() <= 1e-5);
    }

    #[test]
    fn p_ordering_norm_inequality() {
        let ctx8 = small_context(CostConfig::default());
        let ctxi = small_context(CostConfig {
            p: NormExponent::INFINITY,
            ..Default::default()
        });
        let n: f64 = 64.0 * 64.0;
        let b = TrajectoryBudget::new(64, 4.0, AcsSpec { width: 8 }).unwrap();
        for seed in 0..5 {
            let m = variable_density_mask(&b, 0.0, seed).unwrap();
            let c8 = surrogate_cost(&m, &ctx8).unwrap();
            let ci = surrogate_cost(&m, &ctxi).unwrap();
            assert!(ci <= n.powf(1.0 / 8.0) * c8 * (1.0 + 1e-12));
            assert!(c8 <= ci * (1.0 + 1e-12));
        }
    }

    #[test]
    fn mask_mismatch_rejected() {
        let ctx = small_context(CostConfig::default());
        assert!(surrogate_cost(&SamplingMask::full(32), &ctx).is_err());
    }

    #[test]
    fn normalized_lp_matches_definition() {
        let v = [3.0, 4.0, 0.0, 1.0];
        let p = NormExponent(2.0);
        let want = ((9.0 + 16.0 + 1.0) / 4.0f64).sqrt();
        assert!((normalized_lp(v.iter().cloned(), 4, p) - want).abs() < 1e-12);
        assert_eq!(
            normalized_lp(v.iter().cloned(), 4, NormExponent::INFINITY),
            4.0
        );
    }

    #[test]
    fn psf_examples() {
        assert!(psf_sidelobe(&SamplingMask::full(256)) < 1e-12);
        let decimated = SamplingMask::new(256, (0..256).step_by(4).collect()).unwrap();
        assert!((psf_sidelobe(&decimated) - 1.0).abs() < 1e-9);
        let single = SamplingMask::new(256, vec![77]).unwrap();
        assert!((psf_sidelobe(&single) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psf_comb_matches_direct_dft() {
        // Independent O(n²) evaluation of the same ratio.
        let mask = SamplingMask::new(64, vec![0, 3, 5, 20, 31, 32, 33, 50]).unwrap();
        let n = 64usize;
        let mags: Vec<f64> = (0..n)
            .map(|k| {
                let kk = k as f64 - 32.0;
                mask.sampled()
                    .iter()
                    .map(|&j| {
                        let jj = j as f64 - 32.0;
                        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * kk * jj / n as f64)
                    })
                    .sum::<Complex64>()
                    .norm()
            })
            .collect();
        let side = mags
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != 32)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        assert!((psf_sidelobe(&mask) - side / mags[32]).abs() < 1e-12);
    }
}
