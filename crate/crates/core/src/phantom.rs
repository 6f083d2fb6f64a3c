//! Synthetic multi-contrast, multi-coil datasets built from one shared
//! ellipse anatomy.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{fft2_centered, ComplexImage, GridSpec, MultiCoilKspace};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid: GridSpec,
    pub n_tissues: usize,
    /// One weight per tissue, per contrast.
    pub contrast_weights: Vec<Vec<f64>>,
    /// Standard deviation of the complex k-space noise, sqrt(E|n|²).
    pub noise_std: f64,
    pub seed: u64,
}

/// Tissue intensities for four contrasts over six tissues
/// (background, scalp, white matter, gray matter, fluid, lesion).
pub const DEFAULT_WEIGHTS: [[f64; 6]; 4] = [
    [0.0, 0.80, 0.90, 0.60, 0.15, 0.40],
    [0.0, 0.30, 0.45, 0.65, 1.00, 0.85],
    [0.0, 0.50, 0.70, 0.85, 0.95, 0.75],
    [0.0, 0.35, 0.55, 0.75, 0.05, 1.00],
];

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            grid: GridSpec {
                n_lines: 256,
                n_readout: 256,
                n_coils: 8,
            },
            n_tissues: 6,
            contrast_weights: DEFAULT_WEIGHTS.iter().map(|w| w.to_vec()).collect(),
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    /// Default tissue weights cycled to `n_contrasts` contrasts of `n_tissues` tissues.
    pub fn with_contrasts(grid: GridSpec, n_contrasts: usize, noise_std: f64, seed: u64) -> Self {
        let n_tissues = 6;
        let contrast_weights = (0..n_contrasts)
            .map(|c| DEFAULT_WEIGHTS[c % DEFAULT_WEIGHTS.len()].to_vec())
            .collect();
        PhantomSpec {
            grid,
            n_tissues,
            contrast_weights,
            noise_std,
            seed,
        }
    }

    pub fn n_contrasts(&self) -> usize {
        self.contrast_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.n_tissues == 0 {
            return Err(Error::InvalidConfig("n_tissues must be >= 1".into()));
        }
        for (c, w) in self.contrast_weights.iter().enumerate() {
            if w.len() != self.n_tissues {
                return Err(Error::InvalidConfig(format!(
                    "contrast {c} has {} weights, expected {}",
                    w.len(),
                    self.n_tissues
                )));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidConfig(format!(
                    "contrast {c} has a negative or non-finite weight"
                )));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise_std must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoilModel {
    pub n_coils: usize,
    /// (x, y) coil positions in unit-square image coordinates.
    pub centers: Vec<[f64; 2]>,
    pub widths: Vec<f64>,
}

impl CoilModel {
    /// `n_coils` coils evenly spaced around the boundary of the unit square.
    pub fn ring(n_coils: usize, width: f64) -> Self {
        let centers = (0..n_coils)
            .map(|c| {
                let s = 4.0 * (c as f64 + 0.5) / n_coils as f64;
                let t = s.fract();
                match s as usize {
                    0 => [t, 0.0],
                    1 => [1.0, t],
                    2 => [1.0 - t, 1.0],
                    _ => [0.0, 1.0 - t],
                }
            })
            .collect();
        CoilModel {
            n_coils,
            centers,
            widths: vec![width; n_coils],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_coils == 0
            || self.centers.len() != self.n_coils
            || self.widths.len() != self.n_coils
        {
            return Err(Error::InvalidConfig(
                "coil model needs one center and width per coil".into(),
            ));
        }
        if self.widths.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidConfig("coil widths must be positive".into()));
        }
        Ok(())
    }
}

impl Default for CoilModel {
    fn default() -> Self {
        CoilModel::ring(8, 0.6)
    }
}

/// Integer tissue label per pixel, row-major (line, readout).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub n_lines: usize,
    pub n_readout: usize,
    pub n_tissues: usize,
    pub labels: Vec<usize>,
}

impl LabelMap {
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_tissues];
        for &l in &self.labels {
            if l < self.n_tissues {
                h[l] += 1;
            }
        }
        h
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    theta: f64,
    slot: usize,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

const LESION_SLOT: usize = 5;

fn anatomy_ellipses(seed: u64) -> Vec<Ellipse> {
    let deg = PI / 180.0;
    let e = |cx, cy, ax, ay, theta: f64, slot| Ellipse {
        cx,
        cy,
        ax,
        ay,
        theta: theta * deg,
        slot,
    };
    let mut list = vec![
        e(0.0, 0.0, 0.69, 0.92, 0.0, 1),
        e(0.0, -0.0184, 0.6624, 0.874, 0.0, 3),
        e(0.0, -0.0184, 0.57, 0.78, 0.0, 2),
        e(0.22, 0.0, 0.11, 0.31, -18.0, 4),
        e(-0.22, 0.0, 0.16, 0.41, 18.0, 4),
        e(0.0, 0.35, 0.21, 0.25, 0.0, 3),
        e(0.0, 0.1, 0.046, 0.046, 0.0, 4),
        e(-0.08, -0.605, 0.046, 0.023, 0.0, 3),
        e(0.06, -0.605, 0.023, 0.046, 0.0, 3),
        e(0.0, -0.605, 0.023, 0.023, 0.0, 4),
    ];
    let mut rng = rng::stream(seed, &[0xA7A7]);
    for _ in 0..3 {
        let r = rng.gen_range(0.1..0.45);
        let phi = rng.gen_range(0.0..2.0 * PI);
        list.push(Ellipse {
            cx: 0.75 * r * phi.cos(),
            cy: r * phi.sin(),
            ax: rng.gen_range(0.03..0.07),
            ay: rng.gen_range(0.03..0.07),
            theta: rng.gen_range(0.0..PI),
            slot: LESION_SLOT,
        });
    }
    list
}

/// Nested-ellipse label map with seed-placed lesions; a pure function of (grid, n_tissues, seed).
pub fn generate_anatomy(spec: &PhantomSpec) -> LabelMap {
    let g = spec.grid;
    let ellipses = anatomy_ellipses(spec.seed);
    let label_of = |slot: usize| {
        if spec.n_tissues == 1 {
            0
        } else {
            1 + (slot - 1) % (spec.n_tissues - 1)
        }
    };
    let mut labels = vec![0usize; g.plane_len()];
    for l in 0..g.n_lines {
        let y = 2.0 * (l as f64 + 0.5) / g.n_lines as f64 - 1.0;
        for r in 0..g.n_readout {
            let x = 2.0 * (r as f64 + 0.5) / g.n_readout as f64 - 1.0;
            let mut label = 0;
            for e in &ellipses {
                if e.contains(x, y) {
                    label = label_of(e.slot);
                }
            }
            labels[l * g.n_readout + r] = label;
        }
    }
    LabelMap {
        n_lines: g.n_lines,
        n_readout: g.n_readout,
        n_tissues: spec.n_tissues,
        labels,
    }
}

/// Single-coil real image with each pixel set to its tissue's weight.
pub fn render_contrast(labels: &LabelMap, weights: &[f64]) -> Result<ComplexImage> {
    if weights.len() != labels.n_tissues {
        return Err(Error::InvalidConfig(format!(
            "{} weights for {} tissues",
            weights.len(),
            labels.n_tissues
        )));
    }
    let data = labels
        .labels
        .iter()
        .map(|&l| {
            weights
                .get(l)
                .map(|w| Complex64::new(*w, 0.0))
                .ok_or(Error::LabelOutOfRange {
                    label: l,
                    n_tissues: labels.n_tissues,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = GridSpec::new(labels.n_lines, labels.n_readout, 1)?;
    ComplexImage::from_coil_major(grid, data)
}

/// Gaussian-bump magnitudes with a per-coil linear phase ramp.
pub fn generate_sensitivities(model: &CoilModel, grid: GridSpec) -> Result<ComplexImage> {
    model.validate()?;
    let g = grid.with_coils(model.n_coils);
    g.validate()?;
    let mut out = ComplexImage::zeros(g);
    for c in 0..model.n_coils {
        let [cx, cy] = model.centers[c];
        let w2 = model.widths[c] * model.widths[c];
        let angle = 2.0 * PI * c as f64 / model.n_coils as f64;
        let (ramp_y, ramp_x) = angle.sin_cos();
        let plane = out.coil_mut(c);
        for l in 0..g.n_lines {
            let y = (l as f64 + 0.5) / g.n_lines as f64;
            for r in 0..g.n_readout {
                let x = (r as f64 + 0.5) / g.n_readout as f64;
                let mag = (-((x - cx).powi(2) + (y - cy).powi(2)) / w2).exp();
                let phase = angle + 0.5 * PI * (ramp_x * (x - 0.5) + ramp_y * (y - 0.5));
                plane[l * g.n_readout + r] = Complex64::from_polar(mag, phase);
            }
        }
    }
    Ok(out)
}

/// Fully sampled multi-coil k-space of `image` seen through `sensitivities`, plus seeded noise.
pub fn synthesize_kspace(
    image: &ComplexImage,
    sensitivities: &ComplexImage,
    noise_std: f64,
    seed: u64,
) -> Result<MultiCoilKspace> {
    let ig = image.grid();
    let sg = sensitivities.grid();
    if ig.n_coils != 1 || ig.n_lines != sg.n_lines || ig.n_readout != sg.n_readout {
        return Err(Error::DimensionMismatch(format!(
            "image {:?} vs sensitivities {:?}",
            ig.shape(),
            sg.shape()
        )));
    }
    let mut coil_images = ComplexImage::zeros(sg);
    let src = image.coil(0);
    for c in 0..sg.n_coils {
        for ((o, s), v) in coil_images
            .coil_mut(c)
            .iter_mut()
            .zip(sensitivities.coil(c))
            .zip(src)
        {
            *o = s * v;
        }
    }
    let mut ksp = fft2_centered(&coil_images);
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std / std::f64::consts::SQRT_2)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for c in 0..sg.n_coils {
            let mut r = rng::stream(seed, &[c as u64]);
            for v in ksp.coil_mut(c) {
                *v += Complex64::new(normal.sample(&mut r), normal.sample(&mut r));
            }
        }
    }
    Ok(ksp)
}

/// Everything generated for one phantom: shared anatomy, coils and one k-space per contrast.
#[derive(Clone, Debug)]
pub struct PhantomDataset {
    pub spec: PhantomSpec,
    pub labels: LabelMap,
    pub sensitivities: ComplexImage,
    pub images: Vec<ComplexImage>,
    pub kspaces: Vec<MultiCoilKspace>,
}

pub fn generate_dataset(spec: &PhantomSpec, coils: &CoilModel) -> Result<PhantomDataset> {
    spec.validate()?;
    if coils.n_coils != spec.grid.n_coils {
        return Err(Error::InvalidConfig(format!(
            "coil model has {} coils, grid has {}",
            coils.n_coils, spec.grid.n_coils
        )));
    }
    let labels = generate_anatomy(spec);
    let sensitivities = generate_sensitivities(coils, spec.grid)?;
    let mut images = Vec::with_capacity(spec.n_contrasts());
    let mut kspaces = Vec::with_capacity(spec.n_contrasts());
    for (c, w) in spec.contrast_weights.iter().enumerate() {
        let img = render_contrast(&labels, w)?;
        let noise_seed = rng::derive_seed(spec.seed, &[0x4E01, c as u64]);
        kspaces.push(synthesize_kspace(
            &img,
            &sensitivities,
            spec.noise_std,
            noise_seed,
        )?);
        images.push(img);
    }
    Ok(PhantomDataset {
        spec: spec.clone(),
        labels,
        sensitivities,
        images,
        kspaces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::{ifft2_centered, sos_combine};

    fn small_spec(n: usize, coils: usize) -> PhantomSpec {
        PhantomSpec::with_contrasts(GridSpec::new(n, n, coils).unwrap(), 2, 0.0, 3)
    }

    #[test]
    fn anatomy_is_deterministic_and_in_range() {
        let spec = small_spec(64, 2);
        let a = generate_anatomy(&spec);
        assert_eq!(a, generate_anatomy(&spec));
        assert!(a.labels.iter().all(|&l| l < 6));
        let other = PhantomSpec { seed: 4, ..spec };
        assert_ne!(generate_anatomy(&other), a, "lesions move with the seed");
    }

    #[test]
    fn single_tissue_is_constant() {
        let spec = PhantomSpec {
            n_tissues: 1,
            contrast_weights: vec![vec![1.0]],
            ..small_spec(32, 1)
        };
        let a = generate_anatomy(&spec);
        assert!(a.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn default_anatomy_covers_every_tissue() {
        let a = generate_anatomy(&PhantomSpec::default());
        let h = a.histogram();
        assert_eq!(h.len(), 6);
        assert!(h.iter().all(|&n| n > 0), "histogram {h:?}");
    }

    #[test]
    fn render_contrast_examples() {
        let spec = small_spec(32, 1);
        let labels = generate_anatomy(&spec);
        let flat = render_contrast(&labels, &[0.7; 6]).unwrap();
        assert!(flat.data().iter().all(|v| *v == Complex64::new(0.7, 0.0)));

        let t = 4;
        let mut onehot = vec![0.0; 6];
        onehot[t] = 1.0;
        let bin = render_contrast(&labels, &onehot).unwrap();
        for (v, &l) in bin.data().iter().zip(&labels.labels) {
            assert_eq!(v.re, if l == t { 1.0 } else { 0.0 });
        }

        assert!(render_contrast(&labels, &[1.0; 5]).is_err());
        let bad = LabelMap {
            labels: vec![7; 32 * 32],
            ..labels.clone()
        };
        assert!(matches!(
            render_contrast(&bad, &[1.0; 6]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn swapping_weights_permutes_only_those_tissues() {
        let labels = generate_anatomy(&small_spec(64, 1));
        let w = DEFAULT_WEIGHTS[0].to_vec();
        let mut swapped = w.clone();
        swapped.swap(2, 4);
        let a = render_contrast(&labels, &w).unwrap();
        let b = render_contrast(&labels, &swapped).unwrap();
        for ((va, vb), &l) in a.data().iter().zip(b.data()).zip(&labels.labels) {
            match l {
                2 => assert_eq!((va.re, vb.re), (w[2], w[4])),
                4 => assert_eq!((va.re, vb.re), (w[4], w[2])),
                _ => assert_eq!(va, vb),
            }
        }
    }

    #[test]
    fn sensitivities_flat_limit_and_coverage() {
        let grid = GridSpec::new(32, 32, 1).unwrap();
        let flat = CoilModel {
            n_coils: 1,
            centers: vec![[0.5, 0.5]],
            widths: vec![1e6],
        };
        let s = generate_sensitivities(&flat, grid).unwrap();
        assert!(s.data().iter().all(|v| (v.norm() - 1.0).abs() < 1e-3));

        let g = GridSpec::new(256, 256, 8).unwrap();
        let model = CoilModel::default();
        let s = generate_sensitivities(&model, g).unwrap();
        let sos = sos_combine(&s);
        assert!(sos.data().iter().all(|v| v.re > 0.0));
        assert_eq!(s, generate_sensitivities(&model, g).unwrap());
    }

    #[test]
    fn ring_places_coils_on_the_square_boundary() {
        let m = CoilModel::ring(8, 0.5);
        for [x, y] in &m.centers {
            let on_edge = [*x, *y]
                .iter()
                .any(|v| v.abs() < 1e-12 || (v - 1.0).abs() < 1e-12);
            assert!(on_edge, "({x}, {y})");
        }
    }

    #[test]
    fn noiseless_kspace_inverts_to_coil_images() {
        let spec = small_spec(32, 3);
        let labels = generate_anatomy(&spec);
        let img = render_contrast(&labels, &DEFAULT_WEIGHTS[1]).unwrap();
        let sens = generate_sensitivities(&CoilModel::ring(3, 0.6), spec.grid).unwrap();
        let ksp = synthesize_kspace(&img, &sens, 0.0, 9).unwrap();
        let back = ifft2_centered(&ksp);
        for c in 0..3 {
            for ((b, s), v) in back.coil(c).iter().zip(sens.coil(c)).zip(img.coil(0)) {
                assert!((b - s * v).norm() < 1e-6);
            }
        }
        assert_eq!(ksp, synthesize_kspace(&img, &sens, 0.0, 9).unwrap());
    }

    #[test]
    fn pure_noise_has_requested_std() {
        let grid = GridSpec::new(256, 256, 8).unwrap();
        let img = ComplexImage::zeros(grid.with_coils(1));
        let sens = generate_sensitivities(&CoilModel::default(), grid).unwrap();
        let ksp = synthesize_kspace(&img, &sens, 0.01, 42).unwrap();
        let n = ksp.data().len() as f64;
        let mean_sq = ksp.data().iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        let std = mean_sq.sqrt();
        assert!((std / 0.01 - 1.0).abs() < 0.05, "empirical std {std}");
        assert_eq!(ksp, synthesize_kspace(&img, &sens, 0.01, 42).unwrap());
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let img = ComplexImage::zeros(GridSpec::new(16, 16, 1).unwrap());
        let sens =
            generate_sensitivities(&CoilModel::ring(2, 0.5), GridSpec::new(32, 32, 2).unwrap())
                .unwrap();
        assert!(synthesize_kspace(&img, &sens, 0.0, 0).is_err());
    }

    #[test]
    fn contrasts_share_anatomy() {
        let spec = small_spec(64, 2);
        let ds = generate_dataset(&spec, &CoilModel::ring(2, 0.6)).unwrap();
        assert_eq!(ds.kspaces.len(), 2);
        let l = &ds.labels.labels;
        for img in &ds.images {
            for (i, v) in img.data().iter().enumerate() {
                for (j, w) in img.data().iter().enumerate().skip(i + 1).step_by(97) {
                    if l[i] == l[j] {
                        assert_eq!(v, w);
                    }
                }
            }
        }
    }
}
