//! Baseline 1D phase-encode masks at a fixed acquisition budget, and the
//! budget repair shared with the genetic operators.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::psf_sidelobe;
use crate::error::{Error, Result};
use crate::kspace::{AcsSpec, SamplingMask};
use crate::rng;

/// Acquisition budget: exactly `budget` lines, ACS band included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBudget {
    pub n_lines: usize,
    pub reduction: f64,
    pub acs: AcsSpec,
    pub budget: usize,
}

impl TrajectoryBudget {
    /// `budget = round(n_lines / reduction)`.
    pub fn new(n_lines: usize, reduction: f64, acs: AcsSpec) -> Result<Self> {
        if !(reduction.is_finite() && reduction >= 1.0) {
            return Err(Error::InvalidBudget(format!(
                "reduction factor must be >= 1, got {reduction}"
            )));
        }
        let budget = (n_lines as f64 / reduction).round() as usize;
        Self::with_budget(n_lines, acs, budget).map(|b| TrajectoryBudget { reduction, ..b })
    }

    pub fn with_budget(n_lines: usize, acs: AcsSpec, budget: usize) -> Result<Self> {
        if n_lines == 0 {
            return Err(Error::InvalidBudget("n_lines must be positive".into()));
        }
        acs.validate_for(n_lines)
            .map_err(|e| Error::InvalidBudget(e.to_string()))?;
        if budget == 0 || budget > n_lines {
            return Err(Error::InvalidBudget(format!(
                "budget {budget} outside [1, {n_lines}]"
            )));
        }
        if budget < acs.width {
            return Err(Error::InvalidBudget(format!(
                "budget {budget} smaller than ACS width {}",
                acs.width
            )));
        }
        Ok(TrajectoryBudget {
            n_lines,
            reduction: n_lines as f64 / budget as f64,
            acs,
            budget,
        })
    }

    pub fn acs_lines(&self) -> std::ops::Range<usize> {
        self.acs.lines(self.n_lines)
    }

    pub fn is_acs(&self, line: usize) -> bool {
        self.acs_lines().contains(&line)
    }

    /// Lines outside the ACS band, in increasing order.
    pub fn free_lines(&self) -> Vec<usize> {
        (0..self.n_lines).filter(|&l| !self.is_acs(l)).collect()
    }

    /// Lines that may be placed freely.
    pub fn free_budget(&self) -> usize {
        self.budget - self.acs.width
    }

    /// Exact budget, ACS coverage and grid size.
    pub fn check(&self, mask: &SamplingMask) -> Result<()> {
        if mask.n_lines() != self.n_lines {
            return Err(Error::InvalidMask(format!(
                "mask has {} lines, budget is for {}",
                mask.n_lines(),
                self.n_lines
            )));
        }
        if mask.len() != self.budget {
            return Err(Error::InvalidMask(format!(
                "mask samples {} lines, budget is {}",
                mask.len(),
                self.budget
            )));
        }
        if let Some(l) = self.acs_lines().find(|&l| !mask.contains(l)) {
            return Err(Error::InvalidMask(format!("ACS line {l} not sampled")));
        }
        Ok(())
    }

    fn mask_with_free(&self, free: impl IntoIterator<Item = usize>) -> SamplingMask {
        let mut lines: Vec<usize> = self.acs_lines().chain(free).collect();
        lines.sort_unstable();
        SamplingMask::new(self.n_lines, lines).expect("budget construction yields a valid mask")
    }
}

/// ACS band plus equally strided lines over the remaining grid.
///
/// Strides are `floor(free_lines / free_budget)`, with the remainder added one
/// line at a time to the lowest gaps.
pub fn uniform_mask(b: &TrajectoryBudget) -> SamplingMask {
    let free = b.free_lines();
    let k = b.free_budget();
    if k == 0 {
        return b.mask_with_free(std::iter::empty());
    }
    let m = free.len();
    let (q, r) = (m / k, m % k);
    let mut picks = Vec::with_capacity(k);
    let mut pos = 0;
    for j in 0..k {
        picks.push(free[pos]);
        pos += q + usize::from(j < r);
    }
    b.mask_with_free(picks)
}

/// Relative sampling density of `line`: `(1 − |k_c| / k_max)^alpha`, with
/// `k_max = n_lines / 2 + 1` so the outermost line keeps a nonzero weight.
pub fn density_weight(line: usize, n_lines: usize, alpha: f64) -> f64 {
    let kc = (line as f64 - (n_lines / 2) as f64).abs();
    let kmax = (n_lines / 2) as f64 + 1.0;
    (1.0 - kc / kmax).powf(alpha)
}

/// Seeded variable-density random mask (weighted sampling without replacement).
pub fn variable_density_mask(b: &TrajectoryBudget, alpha: f64, seed: u64) -> Result<SamplingMask> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must be non-negative, got {alpha}"
        )));
    }
    let free = b.free_lines();
    let k = b.free_budget();
    let mut r = rng::stream(seed, &[0x7D]);
    // Efraimidis–Spirakis: keep the k largest ln(u) / w.
    let mut keyed: Vec<(f64, usize)> = free
        .iter()
        .map(|&l| {
            let u: f64 = r.gen_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / density_weight(l, b.n_lines, alpha), l)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(b.mask_with_free(keyed.into_iter().take(k).map(|(_, l)| l)))
}

/// Density exponent of the best-of-N draws behind [`psf_optimized_mask`].
pub const PSF_TRIAL_ALPHA: f64 = 1.0;

/// Density exponent of the ARC-like variable-density baseline.
pub const ARC_ALPHA: f64 = 3.0;

/// Best of `n_trials` variable-density draws by PSF sidelobe; trial `t` uses seed `seed + t`.
pub fn psf_optimized_mask(
    b: &TrajectoryBudget,
    n_trials: usize,
    seed: u64,
) -> Result<SamplingMask> {
    if n_trials == 0 {
        return Err(Error::InvalidConfig("n_trials must be >= 1".into()));
    }
    let trials = (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let m = variable_density_mask(b, PSF_TRIAL_ALPHA, seed.wrapping_add(t))?;
            Ok((psf_sidelobe(&m), t, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, _, best) = trials
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("at least one trial");
    Ok(best)
}

/// Projects a line indicator onto the budget: ACS forced on, then random
/// removals or additions of non-ACS lines until exactly `budget` are sampled.
pub fn repair_mask(candidate: &[bool], b: &TrajectoryBudget, seed: u64) -> Result<SamplingMask> {
    if candidate.len() != b.n_lines {
        return Err(Error::InvalidMask(format!(
            "indicator has {} lines, budget is for {}",
            candidate.len(),
            b.n_lines
        )));
    }
    let mut on = candidate.to_vec();
    for l in b.acs_lines() {
        on[l] = true;
    }
    let count = on.iter().filter(|&&v| v).count();
    let mut r = rng::stream(seed, &[0x4E9A]);
    if count > b.budget {
        let removable: Vec<usize> = (0..b.n_lines).filter(|&l| on[l] && !b.is_acs(l)).collect();
        for i in index::sample(&mut r, removable.len(), count - b.budget) {
            on[removable[i]] = false;
        }
    } else if count < b.budget {
        let addable: Vec<usize> = (0..b.n_lines).filter(|&l| !on[l]).collect();
        for i in index::sample(&mut r, addable.len(), b.budget - count) {
            on[addable[i]] = true;
        }
    }
    SamplingMask::from_indicator(&on)
}
