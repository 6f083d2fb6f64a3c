//! Hybrid simulated-annealing / genetic search over fixed-budget masks.
//!
//! Each iteration keeps the best half of the pool, breeds the other half
//! from tournament-selected elites (crossover then mutation), and admits
//! offspring that do not beat the worst elite only with probability
//! `exp(-Δ / T)`. Rejected offspring are replaced by freshly mutated elites.
//! Every random draw comes from a stream keyed by (seed, iteration, slot),
//! so results do not depend on how evaluations are scheduled.

use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{surrogate_cost, CostContext};
use crate::error::{Error, Result};
use crate::kspace::SamplingMask;
use crate::rng::{self, StreamRng};
use crate::trajectories::{uniform_mask, variable_density_mask, TrajectoryBudget, ARC_ALPHA};

/// How the random part of the initial pool is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Uniformly random placement of the free lines.
    #[default]
    Uniform,
    /// Variable-density placement, as for the ARC-like baseline.
    #[serde(alias = "vd")]
    VariableDensity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_iterations: usize,
    pub n_candidates: usize,
    /// Mean of the geometric number of line moves per mutation.
    pub mutation_swaps_mean: f64,
    /// Starting temperature; `None` means 0.1 × the best initial cost.
    pub t_initial: Option<f64>,
    pub t_decay: f64,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            n_iterations: 20,
            n_candidates: 50,
            mutation_swaps_mean: 2.0,
            t_initial: None,
            t_decay: 0.85,
            seed: 0,
            init: InitStrategy::Uniform,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_candidates must be >= 2, got {}",
                self.n_candidates
            )));
        }
        if !(self.mutation_swaps_mean.is_finite() && self.mutation_swaps_mean >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mutation_swaps_mean must be >= 1, got {}",
                self.mutation_swaps_mean
            )));
        }
        if !(self.t_decay > 0.0 && self.t_decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "t_decay must lie in (0, 1), got {}",
                self.t_decay
            )));
        }
        if let Some(t) = self.t_initial {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "t_initial must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Init,
    Elite,
    Offspring,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub mask: SamplingMask,
    pub cost: f64,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_cost: f64,
    pub mean_cost: f64,
    pub temperature: f64,
    pub best_mask: SamplingMask,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<IterationRecord>,
    pub total_evaluations: usize,
    pub wall_time_seconds: f64,
}

impl OptimizationTrace {
    pub fn final_best_cost(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.best_cost)
            .unwrap_or(f64::INFINITY)
    }

    /// `iteration,best_cost,mean_cost,temperature` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,best_cost,mean_cost,temperature\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                r.iteration, r.best_cost, r.mean_cost, r.temperature
            ));
        }
        s
    }
}

// Stream tags.
const TAG_INIT: u64 = 0;
const TAG_SELECT: u64 = 1;
const TAG_CROSS: u64 = 2;
const TAG_MUTATE: u64 = 3;
const TAG_REPLACE: u64 = 4;

/// Uniform crossover of two parents followed by budget repair.
///
/// When the mixed child is short of the budget, missing lines are first drawn
/// from the parents' union so the child stays inside it whenever possible.
pub fn crossover(
    a: &SamplingMask,
    b: &SamplingMask,
    budget: &TrajectoryBudget,
    seed: u64,
) -> Result<SamplingMask> {
    budget.check(a)?;
    budget.check(b)?;
    let mut r = rng::stream(seed, &[TAG_CROSS]);
    let ia = a.indicator();
    let ib = b.indicator();
    let mut child: Vec<bool> = ia
        .iter()
        .zip(&ib)
        .map(|(&x, &y)| if r.gen::<bool>() { x } else { y })
        .collect();
    let count = child.iter().filter(|&&v| v).count();
    if count < budget.budget {
        let pool: Vec<usize> = (0..budget.n_lines)
            .filter(|&l| (ia[l] || ib[l]) && !child[l])
            .collect();
        let take = (budget.budget - count).min(pool.len());
        for i in index::sample(&mut r, pool.len(), take) {
            child[pool[i]] = true;
        }
    }
    crate::trajectories::repair_mask(&child, budget, rng::derive_seed(seed, &[TAG_CROSS, 1]))
}

/// Moves `s ≥ 1` random non-ACS sampled lines to random unsampled lines,
/// with `s` geometric of mean `swaps_mean`.
pub fn mutate(
    parent: &SamplingMask,
    budget: &TrajectoryBudget,
    swaps_mean: f64,
    seed: u64,
) -> Result<SamplingMask> {
    budget.check(parent)?;
    if !(swaps_mean.is_finite() && swaps_mean >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "swaps_mean must be >= 1, got {swaps_mean}"
        )));
    }
    let mut on = parent.indicator();
    let mut movable: Vec<usize> = parent
        .sampled()
        .iter()
        .copied()
        .filter(|&l| !budget.is_acs(l))
        .collect();
    let mut free: Vec<usize> = (0..budget.n_lines).filter(|&l| !on[l]).collect();
    if movable.is_empty() || free.is_empty() {
        return Ok(parent.clone());
    }
    let mut r = rng::stream(seed, &[TAG_MUTATE]);
    let geo = Geometric::new(1.0 / swaps_mean).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let swaps = 1 + geo.sample(&mut r) as usize;
    for _ in 0..swaps {
        let i = r.gen_range(0..movable.len());
        let j = r.gen_range(0..free.len());
        let (out, inn) = (movable[i], free[j]);
        on[out] = false;
        on[inn] = true;
        movable[i] = inn;
        free[j] = out;
    }
    SamplingMask::from_indicator(&on)
}

fn evaluate(masks: Vec<(SamplingMask, Origin)>, ctx: &CostContext) -> Result<Vec<Candidate>> {
    masks
        .into_par_iter()
        .map(|(mask, origin)| {
            let cost = surrogate_cost(&mask, ctx)?;
            if !cost.is_finite() {
                return Err(Error::InvalidConfig("surrogate cost is not finite".into()));
            }
            Ok(Candidate { mask, cost, origin })
        })
        .collect()
}

fn sort_pool(pool: &mut [Candidate]) {
    pool.sort_by(|a, b| a.cost.total_cmp(&b.cost));
}

fn record(iteration: usize, pool: &[Candidate], temperature: f64) -> IterationRecord {
    let best = pool
        .iter()
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .expect("nonempty pool");
    IterationRecord {
        iteration,
        best_cost: best.cost,
        mean_cost: pool.iter().map(|c| c.cost).sum::<f64>() / pool.len() as f64,
        temperature,
        best_mask: best.mask.clone(),
    }
}

fn tournament(elites: &[Candidate], r: &mut StreamRng) -> usize {
    let i = r.gen_range(0..elites.len());
    let j = r.gen_range(0..elites.len());
    // Elites are sorted by cost, so the lower index wins.
    i.min(j)
}

/// Minimizes the surrogate cost over masks satisfying `budget`.
///
/// Returns the best mask found and the per-iteration trace (iteration 0 is
/// the initial pool, so the trace has `n_iterations + 1` records unless the
/// search space holds a single mask).
pub fn optimize(
    ctx: &CostContext,
    budget: &TrajectoryBudget,
    cfg: &OptimizerConfig,
) -> Result<(SamplingMask, OptimizationTrace)> {
    cfg.validate()?;
    let n_lines = ctx.reference().grid().n_lines;
    if budget.n_lines != n_lines {
        return Err(Error::DimensionMismatch(format!(
            "budget is for {} lines, reference has {n_lines}",
            budget.n_lines
        )));
    }
    let start = Instant::now();
    let n = cfg.n_candidates;
    // With an odd pool the extra slot goes to the elites.
    let half = n / 2;
    let n_elites = n - half;

    let init_alpha = match cfg.init {
        InitStrategy::Uniform => 0.0,
        InitStrategy::VariableDensity => ARC_ALPHA,
    };
    let mut initial = vec![(uniform_mask(budget), Origin::Init)];
    for slot in 1..n {
        let m = variable_density_mask(
            budget,
            init_alpha,
            rng::derive_seed(cfg.seed, &[TAG_INIT, slot as u64]),
        )?;
        initial.push((m, Origin::Init));
    }
    let mut pool = evaluate(initial, ctx)?;
    let mut evaluations = pool.len();
    sort_pool(&mut pool);
    let mut temperature = cfg.t_initial.unwrap_or(0.1 * pool[0].cost);
    let mut trace = OptimizationTrace {
        records: vec![record(0, &pool, temperature)],
        ..Default::default()
    };

    let single_mask =
        budget.free_budget() == 0 || budget.free_budget() == budget.free_lines().len();
    let iterations = if single_mask { 0 } else { cfg.n_iterations };

    for it in 1..=iterations {
        let mut elites: Vec<Candidate> = pool.drain(..n_elites).collect();
        for e in &mut elites {
            e.origin = Origin::Elite;
        }
        let worst_elite = elites.last().expect("n_elites >= 1").cost;
        let key = it as u64;

        let offspring_masks = (0..half)
            .map(|slot| {
                let s = slot as u64;
                let mut r = rng::stream(cfg.seed, &[key, s, TAG_SELECT]);
                let pa = tournament(&elites, &mut r);
                let pb = tournament(&elites, &mut r);
                let child = crossover(
                    &elites[pa].mask,
                    &elites[pb].mask,
                    budget,
                    rng::derive_seed(cfg.seed, &[key, s, TAG_CROSS]),
                )?;
                let child = mutate(
                    &child,
                    budget,
                    cfg.mutation_swaps_mean,
                    rng::derive_seed(cfg.seed, &[key, s, TAG_MUTATE]),
                )?;
                Ok((child, Origin::Offspring))
            })
            .collect::<Result<Vec<_>>>()?;
        let offspring = evaluate(offspring_masks, ctx)?;
        evaluations += offspring.len();

        let mut next: Vec<Option<Candidate>> = Vec::with_capacity(half);
        let mut replacements = Vec::new();
        for (slot, child) in offspring.into_iter().enumerate() {
            let s = slot as u64;
            let mut r = rng::stream(cfg.seed, &[key, s, TAG_REPLACE]);
            let accept = if child.cost < worst_elite {
                true
            } else if temperature > 0.0 {
                r.gen::<f64>() < (-(child.cost - worst_elite) / temperature).exp()
            } else {
                false
            };
            if accept {
                next.push(Some(child));
            } else {
                let e = r.gen_range(0..elites.len());
                let m = mutate(
                    &elites[e].mask,
                    budget,
                    cfg.mutation_swaps_mean,
                    rng::derive_seed(cfg.seed, &[key, s, TAG_REPLACE, 1]),
                )?;
                replacements.push((slot, (m, Origin::Offspring)));
                next.push(None);
            }
        }
        let (slots, masks): (Vec<usize>, Vec<_>) = replacements.into_iter().unzip();
        let replaced = evaluate(masks, ctx)?;
        evaluations += replaced.len();
        for (slot, cand) in slots.into_iter().zip(replaced) {
            next[slot] = Some(cand);
        }

        pool = elites;
        pool.extend(next.into_iter().map(|c| c.expect("every slot filled")));
        sort_pool(&mut pool);
        trace.records.push(record(it, &pool, temperature));
        temperature *= cfg.t_decay;
    }

    trace.total_evaluations = evaluations;
    trace.wall_time_seconds = start.elapsed().as_secs_f64();
    let best = trace
        .records
        .last()
        .expect("at least iteration 0")
        .best_mask
        .clone();
    Ok((best, trace))
}
