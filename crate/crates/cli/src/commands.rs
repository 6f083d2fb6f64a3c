use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use outcomes_core::grappa::TableCache;
use outcomes_core::io;
use outcomes_core::phantom::generate_dataset;
use outcomes_core::recon::{append_report, ArtifactSink};
use outcomes_core::trajectories::{
    psf_optimized_mask, uniform_mask, variable_density_mask, ARC_ALPHA,
};
use outcomes_core::{
    evaluate_trajectory, optimize as run_optimizer, AcsSpec, CoilModel, CostConfig, CostContext,
    EvaluationReport, GridSpec, InitStrategy, MultiCoilKspace, NormExponent, OptimizationTrace,
    OptimizerConfig, PhantomSpec, ReconConfig, SamplingMask, TrajectoryBudget,
};

use crate::manifest::{ContrastEntry, ExperimentManifest, Loaded};
use crate::{
    CompareArgs, EvaluateArgs, InitArg, OptimizeArgs, PhantomArgs, SurrogateArgs, SweepArgs,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Reads a settings file as TOML when its extension says so, JSON otherwise.
fn load_settings<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(anyhow::Error::from)
    } else {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

fn recon_config(path: Option<&Path>) -> Result<ReconConfig> {
    path.map(load_settings)
        .transpose()
        .map(Option::unwrap_or_default)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn run_metadata(
    command: &str,
    args: &impl Serialize,
    loaded: Option<&Loaded>,
    extra: serde_json::Value,
) -> serde_json::Value {
    json!({
        "command": command,
        "tool_version": VERSION,
        "args": args,
        "phantom_hash": loaded.map(|l| l.manifest.phantom_hash.clone()),
        "results": extra,
    })
}

fn mask_acs(loaded: &Loaded, acs: Option<usize>) -> Result<AcsSpec> {
    let acs = AcsSpec::new(acs.unwrap_or(loaded.manifest.acs.width))?;
    acs.validate_for(loaded.manifest.grid.n_lines)?;
    Ok(acs)
}

fn surrogate_context(
    reference: MultiCoilKspace,
    acs: AcsSpec,
    s: &SurrogateArgs,
) -> Result<CostContext> {
    let p: NormExponent = s.p.parse()?;
    let config = CostConfig {
        p,
        ..Default::default()
    };
    let needed = (s.dmax + 4).div_ceil(2) * 2;
    let calib = AcsSpec::new(s.calib_acs.unwrap_or(acs.width.max(needed)))?;
    match &s.table_cache {
        Some(dir) => {
            let table =
                TableCache::new(dir).get_or_build(&reference, &calib, s.dmax, s.kx_window)?;
            Ok(CostContext::from_table(reference, Arc::new(table), config)?)
        }
        None => Ok(CostContext::build(
            reference,
            &calib,
            s.dmax,
            s.kx_window,
            config,
        )?),
    }
}

pub fn phantom(args: &PhantomArgs) -> Result<()> {
    let grid = GridSpec::new(args.size, args.size, args.coils)?;
    ensure!(args.contrasts >= 1, "--contrasts must be at least 1");
    let acs = AcsSpec::new(args.acs)?;
    acs.validate_for(grid.n_lines)?;
    let spec = PhantomSpec::with_contrasts(grid, args.contrasts, args.noise_std, args.seed);
    let data = generate_dataset(&spec, &CoilModel::ring(args.coils, 0.6))?;
    create_dir(&args.out)?;
    let mut contrasts = Vec::new();
    for (i, k) in data.kspaces.iter().enumerate() {
        let stem = format!("contrast_{i}");
        io::write_array(&args.out.join(&stem), k)
            .with_context(|| format!("writing contrast {i}"))?;
        contrasts.push(ContrastEntry { index: i, stem });
    }
    let phantom_hash = sha256_hex(&serde_json::to_vec(&spec)?);
    let manifest = ExperimentManifest {
        tool_version: VERSION.into(),
        grid,
        acs,
        seed: args.seed,
        noise_std: args.noise_std,
        contrasts,
        phantom_hash,
        phantom: spec,
    };
    let path = manifest.write(&args.out)?;
    println!("{}", path.display());
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn init_strategy(arg: InitArg) -> InitStrategy {
    match arg {
        InitArg::Uniform => InitStrategy::Uniform,
        InitArg::Vd => InitStrategy::VariableDensity,
    }
}

fn write_run(dir: &Path, name: &str, mask: &SamplingMask, trace: &OptimizationTrace) -> Result<()> {
    io::write_mask(&dir.join(format!("{name}.json")), mask)?;
    fs::write(dir.join(format!("{name}_trace.csv")), trace.to_csv())?;
    Ok(())
}

pub fn optimize(args: &OptimizeArgs) -> Result<()> {
    let loaded = Loaded::open(&args.manifest)?;
    let acs = mask_acs(&loaded, args.acs)?;
    let budget = TrajectoryBudget::new(loaded.manifest.grid.n_lines, args.r, acs)?;
    let mut cfg: OptimizerConfig = match &args.config {
        Some(p) => load_settings(p)?,
        None => OptimizerConfig::default(),
    };
    if let Some(v) = args.iterations {
        cfg.n_iterations = v;
    }
    if let Some(v) = args.candidates {
        cfg.n_candidates = v;
    }
    if let Some(v) = args.init {
        cfg.init = init_strategy(v);
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;

    let start = Instant::now();
    let ctx = surrogate_context(loaded.kspace(args.ref_contrast)?, acs, &args.surrogate)?;
    let (mask, trace) = run_optimizer(&ctx, &budget, &cfg)?;
    create_dir(&args.out)?;
    io::write_mask(&args.out.join("mask.json"), &mask)?;
    fs::write(args.out.join("trace.csv"), trace.to_csv())?;
    let meta = run_metadata(
        "optimize",
        args,
        Some(&loaded),
        json!({
            "optimizer": cfg,
            "budget": budget.budget,
            "wall_time_seconds": start.elapsed().as_secs_f64(),
            "optimizer_wall_time_seconds": trace.wall_time_seconds,
            "total_evaluations": trace.total_evaluations,
            "best_cost": trace.final_best_cost(),
        }),
    );
    write_json(&args.out.join("run.json"), &meta)?;
    println!(
        "best cost {:.6e} after {} evaluations",
        trace.final_best_cost(),
        trace.total_evaluations
    );
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let loaded = Loaded::open(&args.manifest)?;
    let acs = mask_acs(&loaded, args.acs)?;
    let mask = io::read_mask(&args.mask)
        .with_context(|| format!("reading mask {}", args.mask.display()))?;
    let cfg = recon_config(args.recon_config.as_deref())?;
    let name = match &args.name {
        Some(n) => n.clone(),
        None => args
            .mask
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "mask".into()),
    };
    let sink = ArtifactSink {
        dir: args.out.clone(),
        mask_name: name,
    };
    let report = evaluate_trajectory(&loaded.kspace(args.contrast)?, &mask, &acs, &cfg, &sink)?;
    append_report(&args.out.join("report.csv"), &report, mask.reduction())?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Strategy {
    Uniform,
    VariableDensity,
    Psf,
    OutcomesRandom,
    OutcomesVd,
}

impl Strategy {
    const ALL: [Strategy; 5] = [
        Strategy::Uniform,
        Strategy::VariableDensity,
        Strategy::Psf,
        Strategy::OutcomesRandom,
        Strategy::OutcomesVd,
    ];

    fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::VariableDensity => "vd",
            Strategy::Psf => "psf",
            Strategy::OutcomesRandom => "outcomes-random",
            Strategy::OutcomesVd => "outcomes-vd",
        }
    }

    fn optimized(self) -> bool {
        matches!(self, Strategy::OutcomesRandom | Strategy::OutcomesVd)
    }
}

fn target_list(
    loaded: &Loaded,
    reference: usize,
    targets: Option<&Vec<usize>>,
) -> Result<Vec<usize>> {
    let n = loaded.n_contrasts();
    ensure!(
        reference < n,
        "reference contrast {reference} is out of range ({n} contrasts)"
    );
    let t = match targets {
        Some(t) => t.clone(),
        None => (0..n).filter(|&c| c != reference).collect(),
    };
    ensure!(!t.is_empty(), "no target contrasts");
    if let Some(&bad) = t.iter().find(|&&c| c >= n) {
        bail!("target contrast {bad} is out of range ({n} contrasts)");
    }
    Ok(t)
}

struct Cell {
    strategy: Strategy,
    target: usize,
    seed: u64,
    report: EvaluationReport,
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let loaded = Loaded::open(&args.manifest)?;
    let targets = target_list(&loaded, args.ref_contrast, args.target_contrasts.as_ref())?;
    ensure!(
        !args.seeds.is_empty(),
        "--seeds must list at least one seed"
    );
    let acs = mask_acs(&loaded, args.acs)?;
    let budget = TrajectoryBudget::new(loaded.manifest.grid.n_lines, args.r, acs)?;
    let recon = recon_config(args.recon_config.as_deref())?;
    let start = Instant::now();
    let ctx = surrogate_context(loaded.kspace(args.ref_contrast)?, acs, &args.surrogate)?;

    let mask_dir = args.out.join("masks");
    let map_dir = args.out.join("maps");
    create_dir(&mask_dir)?;
    create_dir(&map_dir)?;

    // Masks for every (strategy, seed); uniform is seed-independent but listed per seed.
    let mut masks: Vec<(Strategy, u64, SamplingMask)> = Vec::new();
    let mut optimizer_runs = Vec::new();
    for &seed in &args.seeds {
        for s in Strategy::ALL {
            let mask = match s {
                Strategy::Uniform => uniform_mask(&budget),
                Strategy::VariableDensity => variable_density_mask(&budget, ARC_ALPHA, seed)?,
                Strategy::Psf => psf_optimized_mask(&budget, args.psf_trials, seed)?,
                Strategy::OutcomesRandom | Strategy::OutcomesVd => {
                    let init = if s == Strategy::OutcomesVd {
                        InitStrategy::VariableDensity
                    } else {
                        InitStrategy::Uniform
                    };
                    let cfg = OptimizerConfig {
                        n_iterations: args.iterations,
                        n_candidates: args.candidates,
                        seed,
                        init,
                        ..Default::default()
                    };
                    let (m, trace) = run_optimizer(&ctx, &budget, &cfg)?;
                    fs::write(
                        mask_dir.join(format!("{}_s{seed}_trace.csv", s.name())),
                        trace.to_csv(),
                    )?;
                    optimizer_runs.push(json!({
                        "strategy": s.name(),
                        "seed": seed,
                        "total_evaluations": trace.total_evaluations,
                        "wall_time_seconds": trace.wall_time_seconds,
                        "best_cost": trace.final_best_cost(),
                    }));
                    m
                }
            };
            io::write_mask(&mask_dir.join(format!("{}_s{seed}.json", s.name())), &mask)?;
            masks.push((s, seed, mask));
        }
    }

    let kspaces: Vec<(usize, MultiCoilKspace)> = targets
        .iter()
        .map(|&t| Ok((t, loaded.kspace(t)?)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(Strategy, u64, &SamplingMask, usize, &MultiCoilKspace)> = masks
        .iter()
        .flat_map(|(s, seed, m)| kspaces.iter().map(move |(t, k)| (*s, *seed, m, *t, k)))
        .collect();
    let cells: Vec<Cell> = jobs
        .into_par_iter()
        .map(|(strategy, seed, mask, target, k)| {
            let sink = ArtifactSink {
                dir: map_dir.clone(),
                mask_name: format!("{}_c{target}_s{seed}", strategy.name()),
            };
            let report = evaluate_trajectory(k, mask, &acs, &recon, &sink)?;
            Ok(Cell {
                strategy,
                target,
                seed,
                report,
            })
        })
        .collect::<Result<_>>()?;

    // Every cell must have been scored with the same reconstruction settings.
    let hash = &cells[0].report.config_hash;
    ensure!(
        cells.iter().all(|c| &c.report.config_hash == hash),
        "reconstruction settings differ between cells"
    );

    let uniform_nrmse = |target: usize, seed: u64| {
        cells
            .iter()
            .find(|c| c.strategy == Strategy::Uniform && c.target == target && c.seed == seed)
            .map(|c| c.report.nrmse)
            .expect("uniform cell exists")
    };
    let mut csv = String::from("strategy,ref_contrast,target_contrast,R,seed,nrmse,improvement_vs_uniform,runtime_seconds\n");
    for c in &cells {
        let reference = if c.strategy.optimized() {
            args.ref_contrast.to_string()
        } else {
            String::new()
        };
        let improvement = 1.0 - c.report.nrmse / uniform_nrmse(c.target, c.seed);
        csv.push_str(&format!(
            "{},{},{},{},{},{:.8e},{:.6},{:.4}\n",
            c.strategy.name(),
            reference,
            c.target,
            args.r,
            c.seed,
            c.report.nrmse,
            improvement,
            c.report.runtime_seconds
        ));
    }
    create_dir(&args.out)?;
    fs::write(args.out.join("compare.csv"), csv)?;
    let meta = run_metadata(
        "compare",
        args,
        Some(&loaded),
        json!({
            "recon": recon,
            "recon_config_hash": hash,
            "targets": targets,
            "optimizer_runs": optimizer_runs,
            "wall_time_seconds": start.elapsed().as_secs_f64(),
        }),
    );
    write_json(&args.out.join("run.json"), &meta)?;
    println!("{}", args.out.join("compare.csv").display());
    Ok(())
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .trim()
        .split_once(['x', 'X'])
        .with_context(|| format!("config {s:?} is not of the form ITERATIONSxCANDIDATES"))?;
    Ok((
        a.trim().parse().context("iterations")?,
        b.trim().parse().context("candidates")?,
    ))
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let loaded = Loaded::open(&args.manifest)?;
    ensure!(
        args.ref_contrast < loaded.n_contrasts(),
        "reference contrast {} is out of range",
        args.ref_contrast
    );
    ensure!(
        !args.seeds.is_empty(),
        "--seeds must list at least one seed"
    );
    let pairs: Vec<(usize, usize)> = args
        .configs
        .iter()
        .map(|s| parse_pair(s))
        .collect::<Result<_>>()?;
    let acs = mask_acs(&loaded, args.acs)?;
    let budget = TrajectoryBudget::new(loaded.manifest.grid.n_lines, args.r, acs)?;
    let recon = recon_config(args.recon_config.as_deref())?;
    let reference = loaded.kspace(args.ref_contrast)?;
    let ctx = surrogate_context(reference.clone(), acs, &args.surrogate)?;
    let run_dir: PathBuf = args.out.join("runs");
    create_dir(&run_dir)?;

    let mut csv = String::from(
        "iterations,candidates,max_evaluations,mean_wall_time_seconds,mean_final_cost,mean_nrmse\n",
    );
    let mut rows = Vec::new();
    for &(iterations, candidates) in &pairs {
        let (mut wall, mut cost, mut err, mut max_evals) = (0.0, 0.0, 0.0, 0usize);
        for &seed in &args.seeds {
            let cfg = OptimizerConfig {
                n_iterations: iterations,
                n_candidates: candidates,
                seed,
                ..Default::default()
            };
            let (mask, trace) = run_optimizer(&ctx, &budget, &cfg)?;
            let name = format!("i{iterations}_c{candidates}_s{seed}");
            write_run(&run_dir, &name, &mask, &trace)?;
            let sink = ArtifactSink {
                dir: run_dir.clone(),
                mask_name: name,
            };
            let report = evaluate_trajectory(&reference, &mask, &acs, &recon, &sink)?;
            wall += trace.wall_time_seconds;
            cost += trace.final_best_cost();
            err += report.nrmse;
            max_evals = max_evals.max(trace.total_evaluations);
        }
        let n = args.seeds.len() as f64;
        csv.push_str(&format!(
            "{iterations},{candidates},{max_evals},{:.4},{:.8e},{:.8e}\n",
            wall / n,
            cost / n,
            err / n
        ));
        rows.push(json!({ "iterations": iterations, "candidates": candidates, "max_evaluations": max_evals }));
    }
    fs::write(args.out.join("sweep.csv"), csv)?;
    let meta = run_metadata(
        "sweep",
        args,
        Some(&loaded),
        json!({ "recon": recon, "rows": rows }),
    );
    write_json(&args.out.join("run.json"), &meta)?;
    println!("{}", args.out.join("sweep.csv").display());
    Ok(())
}
