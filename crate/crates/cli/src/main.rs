//! `outcomes`: phantom generation, mask optimization, and baseline comparison.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "outcomes",
    version,
    about = "Optimize Cartesian undersampling masks from a reference scan"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a multi-contrast, multi-coil phantom dataset and its manifest.
    Phantom(PhantomArgs),
    /// Optimize a mask on one reference contrast.
    Optimize(OptimizeArgs),
    /// Reconstruct one contrast with a given mask and score it.
    Evaluate(EvaluateArgs),
    /// Compare the five sampling strategies across target contrasts and seeds.
    Compare(CompareArgs),
    /// Sweep (iterations, candidates) pairs at a fixed evaluation budget.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct PhantomArgs {
    /// Image size (lines = readout samples).
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub coils: usize,
    #[arg(long, default_value_t = 4)]
    pub contrasts: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// ACS width recorded in the manifest as the experiment default.
    #[arg(long, default_value_t = 24)]
    pub acs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Uniform,
    Vd,
}

/// Surrogate-cost settings shared by the optimizing commands.
#[derive(Args, Debug, Clone, Serialize)]
pub struct SurrogateArgs {
    /// L_p exponent of the cost (a number >= 2, or "inf").
    #[arg(long, default_value = "8")]
    pub p: String,
    /// Largest line shift the extrapolation table covers.
    #[arg(long, default_value_t = 4)]
    pub dmax: usize,
    #[arg(long, default_value_t = 3)]
    pub kx_window: usize,
    /// ACS width used to calibrate the table; defaults to max(acs, 2 * ceil((dmax + 4) / 2)).
    #[arg(long)]
    pub calib_acs: Option<usize>,
    /// Directory for cached extrapolation tables.
    #[arg(long)]
    pub table_cache: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct OptimizeArgs {
    /// Manifest file or the directory holding `manifest.json`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub ref_contrast: usize,
    #[arg(long = "R", default_value_t = 4.0)]
    pub r: f64,
    /// Mask ACS width; defaults to the manifest's.
    #[arg(long)]
    pub acs: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimizer settings file (JSON, or TOML by extension) with flat keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub surrogate: SurrogateArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub contrast: usize,
    #[arg(long)]
    pub acs: Option<usize>,
    /// Name used for artifacts and the report row; defaults to the mask file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Recon settings file (JSON or TOML).
    #[arg(long)]
    pub recon_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long = "R", default_value_t = 4.0)]
    pub r: f64,
    #[arg(long, default_value_t = 0)]
    pub ref_contrast: usize,
    /// Contrasts to score on; defaults to every non-reference contrast.
    #[arg(long, value_delimiter = ',')]
    pub target_contrasts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub acs: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub iterations: usize,
    #[arg(long, default_value_t = 50)]
    pub candidates: usize,
    /// Trials for the PSF-optimized baseline.
    #[arg(long, default_value_t = 20)]
    pub psf_trials: usize,
    #[arg(long)]
    pub recon_config: Option<PathBuf>,
    #[command(flatten)]
    pub surrogate: SurrogateArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long = "R", default_value_t = 4.0)]
    pub r: f64,
    #[arg(long, default_value_t = 0)]
    pub ref_contrast: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Comma-separated `iterations x candidates` pairs.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "10x100,20x50,33x33,50x20"
    )]
    pub configs: Vec<String>,
    #[arg(long)]
    pub acs: Option<usize>,
    #[arg(long)]
    pub recon_config: Option<PathBuf>,
    #[command(flatten)]
    pub surrogate: SurrogateArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(a) => commands::phantom(&a),
        Command::Optimize(a) => commands::optimize(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Sweep(a) => commands::sweep(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
