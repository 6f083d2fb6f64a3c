//! GRAPPA shift operators calibrated on the reference ACS band, the
//! precomputed per-line extrapolation table, and the table-lookup
//! pseudo-reconstruction used inside the optimizer loop.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::kspace::{AcsSpec, CoilArray, GridSpec, MultiCoilKspace, SamplingMask};
use crate::linalg;

/// Minimum number of source/target line pairs beyond |d| required in the ACS band.
const MIN_EXTRA_ACS_LINES: usize = 4;
const REFINEMENT_STEPS: usize = 8;

/// Linear map predicting line `i + shift` (all coils) from a readout window of line `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrappaOperator {
    pub shift: isize,
    pub kx_window: usize,
    pub n_coils: usize,
    /// Row-major `n_coils × (n_coils · kx_window)`; source index is `coil * kx_window + tap`.
    pub kernel: Vec<Complex64>,
    /// ‖targets − kernel · sources‖₂ / ‖targets‖₂ over the calibration set.
    pub fit_residual: f64,
}

impl GrappaOperator {
    pub fn n_sources(&self) -> usize {
        self.n_coils * self.kx_window
    }

    #[inline]
    pub fn weight(&self, target_coil: usize, source_coil: usize, tap: usize) -> Complex64 {
        self.kernel[target_coil * self.n_sources() + source_coil * self.kx_window + tap]
    }

    /// Applies the kernel to `line` of `src` at interior readout positions, writing the
    /// coil-major `(coil, readout)` result into `out`. Edge samples are left untouched.
    fn apply_line(&self, src: &CoilArray, line: usize, out: &mut [Complex64]) {
        let g = src.grid();
        let h = self.kx_window / 2;
        let nro = g.n_readout;
        let ns = self.n_sources();
        let mut window = vec![Complex64::default(); ns];
        for k in h..nro.saturating_sub(h) {
            for sc in 0..self.n_coils {
                let row = src.line(sc, line);
                window[sc * self.kx_window..(sc + 1) * self.kx_window]
                    .copy_from_slice(&row[k - h..=k + h]);
            }
            for tc in 0..self.n_coils {
                let w = &self.kernel[tc * ns..(tc + 1) * ns];
                out[tc * nro + k] = w.iter().zip(&window).map(|(a, b)| a * b).sum();
            }
        }
    }
}

fn check_window(kx_window: usize, n_readout: usize) -> Result<()> {
    if kx_window == 0 || kx_window.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "kx_window must be odd and positive, got {kx_window}"
        )));
    }
    if kx_window > n_readout {
        return Err(Error::InvalidConfig(format!(
            "kx_window {kx_window} exceeds readout length {n_readout}"
        )));
    }
    Ok(())
}

/// Least-squares fit of the shift-`d` operator over the ACS band of `reference`.
///
/// Solves the damped normal equations `K (A + λI) = B` with
/// `λ = 1e-6 · tr(A) / m`, then iteratively refines against the undamped
/// system so the damping never biases well-posed fits.
pub fn calibrate(
    reference: &MultiCoilKspace,
    acs: &AcsSpec,
    d: isize,
    kx_window: usize,
) -> Result<GrappaOperator> {
    let g = reference.grid();
    acs.validate_for(g.n_lines)?;
    check_window(kx_window, g.n_readout)?;
    let ad = d.unsigned_abs();
    if ad == 0 {
        return Err(Error::InvalidConfig("shift must be nonzero".into()));
    }
    if acs.width < ad + MIN_EXTRA_ACS_LINES {
        return Err(Error::Calibration(format!(
            "ACS width {} too small for shift {d}: need at least {}",
            acs.width,
            ad + MIN_EXTRA_ACS_LINES
        )));
    }
    let nc = g.n_coils;
    let m = nc * kx_window;
    let h = kx_window / 2;
    let lines = acs.lines(g.n_lines);
    let pairs: Vec<(usize, usize)> = lines
        .clone()
        .filter_map(|i| {
            let t = i as isize + d;
            (t >= lines.start as isize && t < lines.end as isize).then_some((i, t as usize))
        })
        .collect();
    let interior = g.n_readout - 2 * h;
    if pairs.len() * interior < m {
        return Err(Error::Calibration(format!(
            "{} equations for {m} unknowns",
            pairs.len() * interior
        )));
    }

    // A = Σ s sᴴ (m × m), Bᴴ = Σ s tᴴ (m × nc).
    let mut a = vec![Complex64::default(); m * m];
    let mut bh = vec![Complex64::default(); m * nc];
    let mut s = vec![Complex64::default(); m];
    let mut t = vec![Complex64::default(); nc];
    let mut target_energy = 0.0;
    for &(src, dst) in &pairs {
        for k in h..g.n_readout - h {
            gather(reference, src, k, kx_window, &mut s);
            for (c, tc) in t.iter_mut().enumerate() {
                *tc = reference.get(dst, k, c);
                target_energy += tc.norm_sqr();
            }
            for i in 0..m {
                let si = s[i];
                for j in 0..m {
                    a[i * m + j] += si * s[j].conj();
                }
                for c in 0..nc {
                    bh[i * nc + c] += si * t[c].conj();
                }
            }
        }
    }

    let trace_mean = (0..m).map(|i| a[i * m + i].re).sum::<f64>() / m as f64;
    let lambda = (1e-6 * trace_mean).max(f64::MIN_POSITIVE);
    let mut damped = a.clone();
    for i in 0..m {
        damped[i * m + i] += lambda;
    }
    let l = linalg::cholesky(&damped, m).ok_or_else(|| {
        Error::Calibration("damped normal matrix is not positive definite".into())
    })?;

    // X = Kᴴ (m × nc)
    let mut x = bh.clone();
    linalg::cholesky_solve(&l, m, &mut x, nc);
    for _ in 0..REFINEMENT_STEPS {
        let ax = linalg::matmul(&a, &x, m, nc);
        let mut r: Vec<Complex64> = bh.iter().zip(&ax).map(|(b, v)| b - v).collect();
        linalg::cholesky_solve(&l, m, &mut r, nc);
        for (xi, ri) in x.iter_mut().zip(&r) {
            *xi += ri;
        }
    }

    let mut kernel = vec![Complex64::default(); nc * m];
    for c in 0..nc {
        for j in 0..m {
            kernel[c * m + j] = x[j * nc + c].conj();
        }
    }

    let mut residual = 0.0;
    for &(src, dst) in &pairs {
        for k in h..g.n_readout - h {
            gather(reference, src, k, kx_window, &mut s);
            for c in 0..nc {
                let pred: Complex64 = kernel[c * m..(c + 1) * m]
                    .iter()
                    .zip(&s)
                    .map(|(w, v)| w * v)
                    .sum();
                residual += (reference.get(dst, k, c) - pred).norm_sqr();
            }
        }
    }
    let fit_residual = if target_energy > 0.0 {
        (residual / target_energy).sqrt()
    } else {
        0.0
    };

    Ok(GrappaOperator {
        shift: d,
        kx_window,
        n_coils: nc,
        kernel,
        fit_residual,
    })
}

fn gather(src: &CoilArray, line: usize, k: usize, w: usize, out: &mut [Complex64]) {
    let h = w / 2;
    let nc = src.grid().n_coils;
    for c in 0..nc {
        out[c * w..(c + 1) * w].copy_from_slice(&src.line(c, line)[k - h..=k + h]);
    }
}

static BUILD_TABLE_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Number of [`build_table`] calls made by this process.
pub fn build_table_calls() -> usize {
    BUILD_TABLE_CALLS.load(Ordering::SeqCst)
}

/// Extrapolated lines `entry(i, d)` for every source line `i` and shift
/// `0 < |d| ≤ d_max` with `i + d` on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GrappaExtrapolationTable {
    grid: GridSpec,
    d_max: usize,
    kx_window: usize,
    /// Slot `(shift_index, i)` holds `n_coils × n_readout` samples, coil-major.
    data: Vec<Complex64>,
    fit_residuals: Vec<f64>,
}

impl GrappaExtrapolationTable {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn kx_window(&self) -> usize {
        self.kx_window
    }

    /// Calibration residual per shift, ordered `-d_max..=-1, 1..=d_max`.
    pub fn fit_residuals(&self) -> &[f64] {
        &self.fit_residuals
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    fn entry_len(&self) -> usize {
        self.grid.n_coils * self.grid.n_readout
    }

    fn shift_index(&self, d: isize) -> Option<usize> {
        let dm = self.d_max as isize;
        if d == 0 || d < -dm || d > dm {
            None
        } else if d < 0 {
            Some((d + dm) as usize)
        } else {
            Some((d + dm - 1) as usize)
        }
    }

    fn slot(&self, i: usize, d: isize) -> Option<usize> {
        let si = self.shift_index(d)?;
        let t = i as isize + d;
        if i >= self.grid.n_lines || t < 0 || t >= self.grid.n_lines as isize {
            return None;
        }
        Some(si * self.grid.n_lines + i)
    }

    /// Extrapolation of source line `i` to line `i + d`, coil-major `(coil, readout)`.
    pub fn entry(&self, i: usize, d: isize) -> Option<&[Complex64]> {
        let s = self.slot(i, d)?;
        let n = self.entry_len();
        Some(&self.data[s * n..(s + 1) * n])
    }

    /// Number of valid `(i, d)` entries.
    pub fn n_entries(&self) -> usize {
        let n = self.grid.n_lines;
        (1..=self.d_max).map(|d| 2 * n.saturating_sub(d)).sum()
    }

    /// Iterates over all valid `(i, d)` pairs.
    pub fn keys(&self) -> impl Iterator<Item = (usize, isize)> + '_ {
        let dm = self.d_max as isize;
        (-dm..=dm)
            .filter(|d| *d != 0)
            .flat_map(move |d| (0..self.grid.n_lines).map(move |i| (i, d)))
            .filter(move |&(i, d)| self.slot(i, d).is_some())
    }
}

/// Calibrates one operator per shift and applies each to every reference line.
pub fn build_table(
    reference: &MultiCoilKspace,
    acs: &AcsSpec,
    d_max: usize,
    kx_window: usize,
) -> Result<GrappaExtrapolationTable> {
    BUILD_TABLE_CALLS.fetch_add(1, Ordering::SeqCst);
    if d_max == 0 {
        return Err(Error::InvalidConfig("d_max must be >= 1".into()));
    }
    let g = reference.grid();
    let dm = d_max as isize;
    let shifts: Vec<isize> = (-dm..=dm).filter(|d| *d != 0).collect();
    let operators = shifts
        .par_iter()
        .map(|&d| calibrate(reference, acs, d, kx_window))
        .collect::<Result<Vec<_>>>()?;

    let entry_len = g.n_coils * g.n_readout;
    let n = g.n_lines;
    let h = kx_window / 2;
    let mut data = vec![Complex64::default(); shifts.len() * n * entry_len];
    data.par_chunks_mut(n * entry_len)
        .zip(operators.par_iter())
        .for_each(|(block, op)| {
            let d = op.shift;
            for (i, out) in block.chunks_exact_mut(entry_len).enumerate() {
                let t = i as isize + d;
                if t < 0 || t >= n as isize {
                    continue;
                }
                op.apply_line(reference, i, out);
                let t = t as usize;
                for c in 0..g.n_coils {
                    let target = reference.line(c, t);
                    let row = &mut out[c * g.n_readout..(c + 1) * g.n_readout];
                    row[..h].copy_from_slice(&target[..h]);
                    row[g.n_readout - h..].copy_from_slice(&target[g.n_readout - h..]);
                }
            }
        });

    Ok(GrappaExtrapolationTable {
        grid: g,
        d_max,
        kx_window,
        data,
        fit_residuals: operators.iter().map(|o| o.fit_residual).collect(),
    })
}

/// Where a line of the pseudo-reconstruction comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineSource {
    Sampled,
    Extrapolated { source: usize, shift: isize },
    Zero,
}

/// Nearest sampled line within `d_max` for every line, ties toward the lower index.
pub fn fill_plan(mask: &SamplingMask, d_max: usize) -> Vec<LineSource> {
    let n = mask.n_lines();
    let sampled = mask.sampled();
    let mut plan = vec![LineSource::Zero; n];
    let mut next_idx = 0;
    for (j, slot) in plan.iter_mut().enumerate() {
        while next_idx < sampled.len() && sampled[next_idx] < j {
            next_idx += 1;
        }
        if next_idx < sampled.len() && sampled[next_idx] == j {
            *slot = LineSource::Sampled;
            continue;
        }
        let prev = next_idx.checked_sub(1).map(|k| sampled[k]);
        let next = sampled.get(next_idx).copied();
        let dp = prev.map(|p| j - p);
        let dn = next.map(|q| q - j);
        let pick = match (dp, dn) {
            (Some(a), Some(b)) if a <= b => prev.filter(|_| a <= d_max),
            (Some(_), Some(b)) => next.filter(|_| b <= d_max),
            (Some(a), None) => prev.filter(|_| a <= d_max),
            (None, Some(b)) => next.filter(|_| b <= d_max),
            (None, None) => None,
        };
        if let Some(i) = pick {
            *slot = LineSource::Extrapolated {
                source: i,
                shift: j as isize - i as isize,
            };
        }
    }
    plan
}

/// Fills missing lines from the table; sampled lines are copied from `reference`.
/// Table lookups and copies only.
pub fn pseudo_reconstruct(
    mask: &SamplingMask,
    reference: &MultiCoilKspace,
    table: &GrappaExtrapolationTable,
) -> Result<MultiCoilKspace> {
    let g = reference.grid();
    if mask.is_empty() {
        return Err(Error::InvalidMask("empty mask".into()));
    }
    if mask.n_lines() != g.n_lines || table.grid() != g {
        return Err(Error::DimensionMismatch(format!(
            "mask {} lines, reference {:?}, table {:?}",
            mask.n_lines(),
            g.shape(),
            table.grid().shape()
        )));
    }
    let mut out = MultiCoilKspace::zeros(g);
    let nro = g.n_readout;
    for (j, src) in fill_plan(mask, table.d_max()).into_iter().enumerate() {
        match src {
            LineSource::Sampled => {
                for c in 0..g.n_coils {
                    out.line_mut(c, j).copy_from_slice(reference.line(c, j));
                }
            }
            LineSource::Extrapolated { source, shift } => {
                let e = table
                    .entry(source, shift)
                    .expect("plan only emits valid table keys");
                for c in 0..g.n_coils {
                    out.line_mut(c, j)
                        .copy_from_slice(&e[c * nro..(c + 1) * nro]);
                }
            }
            LineSource::Zero => {}
        }
    }
    Ok(out)
}

/// Identity of a cached table.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableKey {
    pub reference_checksum: String,
    pub acs_width: usize,
    pub d_max: usize,
    pub kx_window: usize,
}

impl TableKey {
    pub fn new(reference: &MultiCoilKspace, acs: &AcsSpec, d_max: usize, kx_window: usize) -> Self {
        TableKey {
            reference_checksum: reference_checksum(reference),
            acs_width: acs.width,
            d_max,
            kx_window,
        }
    }

    fn file_stem(&self) -> String {
        format!(
            "table_{}_acs{}_d{}_w{}",
            &self.reference_checksum[..16],
            self.acs_width,
            self.d_max,
            self.kx_window
        )
    }
}

/// SHA-256 of the reference in its on-disk encoding.
pub fn reference_checksum(reference: &MultiCoilKspace) -> String {
    let bytes = io::encode_complex64(&reference.to_row_major());
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CacheIndex {
    entries: Vec<CacheEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: TableKey,
    stem: String,
    fit_residuals: Vec<f64>,
}

/// Directory of tables stored in the array format, indexed by `index.json`.
///
/// Tables are stored at 32-bit precision, so a cached table matches a fresh
/// build to single-precision rounding rather than bit-exactly.
pub struct TableCache {
    dir: PathBuf,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TableCache { dir: dir.into() }
    }

    fn index_path(&self) -> PathBuf {
        self.dir.join("index.json")
    }

    fn read_index(&self) -> Result<CacheIndex> {
        match fs::read(self.index_path()) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(CacheIndex::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn load(&self, key: &TableKey) -> Result<Option<GrappaExtrapolationTable>> {
        let index = self.read_index()?;
        let Some(entry) = index.entries.iter().find(|e| &e.key == key) else {
            return Ok(None);
        };
        let arr = io::read_array(&self.dir.join(&entry.stem))?;
        let ag = arr.grid();
        let slots = 2 * key.d_max;
        if ag.n_lines % slots != 0 {
            return Err(Error::Format {
                path: entry.stem.clone(),
                reason: "slot count does not match d_max".into(),
            });
        }
        let grid = GridSpec::new(ag.n_lines / slots, ag.n_readout, ag.n_coils)?;
        // The on-disk array is (slot, readout, coil); regroup into coil-major slots.
        let row_major = arr.to_row_major();
        let entry_len = grid.n_coils * grid.n_readout;
        let mut data = vec![Complex64::default(); row_major.len()];
        for (s, block) in row_major.chunks_exact(entry_len).enumerate() {
            for r in 0..grid.n_readout {
                for c in 0..grid.n_coils {
                    data[s * entry_len + c * grid.n_readout + r] = block[r * grid.n_coils + c];
                }
            }
        }
        Ok(Some(GrappaExtrapolationTable {
            grid,
            d_max: key.d_max,
            kx_window: key.kx_window,
            data,
            fit_residuals: entry.fit_residuals.clone(),
        }))
    }

    pub fn store(&self, key: &TableKey, table: &GrappaExtrapolationTable) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let g = table.grid;
        let slots = 2 * table.d_max * g.n_lines;
        let entry_len = table.entry_len();
        let mut row_major = vec![Complex64::default(); table.data.len()];
        for s in 0..slots {
            for c in 0..g.n_coils {
                for r in 0..g.n_readout {
                    row_major[s * entry_len + r * g.n_coils + c] =
                        table.data[s * entry_len + c * g.n_readout + r];
                }
            }
        }
        let arr = CoilArray::from_row_major(
            GridSpec {
                n_lines: slots,
                ..g
            },
            &row_major,
        )?;
        let stem = key.file_stem();
        let path = self.dir.join(&stem);
        io::write_array(&path, &arr)?;

        let mut index = self.read_index()?;
        index.entries.retain(|e| &e.key != key);
        index.entries.push(CacheEntry {
            key: key.clone(),
            stem,
            fit_residuals: table.fit_residuals.clone(),
        });
        let by_key: BTreeMap<_, _> = index
            .entries
            .into_iter()
            .map(|e| (e.key.clone(), e))
            .collect();
        let index = CacheIndex {
            entries: by_key.into_values().collect(),
        };
        fs::write(self.index_path(), serde_json::to_vec_pretty(&index)?)?;
        Ok(path)
    }

    /// Returns the cached table for `key`, building and storing it on a miss.
    pub fn get_or_build(
        &self,
        reference: &MultiCoilKspace,
        acs: &AcsSpec,
        d_max: usize,
        kx_window: usize,
    ) -> Result<GrappaExtrapolationTable> {
        let key = TableKey::new(reference, acs, d_max, kx_window);
        if let Some(t) = self.load(&key)? {
            if t.grid == reference.grid() {
                return Ok(t);
            }
        }
        let t = build_table(reference, acs, d_max, kx_window)?;
        self.store(&key, &t)?;
        Ok(t)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
