//! Surrogate-driven optimization of Cartesian undersampling masks for
//! multi-contrast MRI.
//!
//! A fully sampled reference scan calibrates a table of GRAPPA line
//! extrapolators once. Candidate masks are then scored by filling their
//! missing lines from that table and measuring the image-domain error, and a
//! hybrid annealing/genetic search minimizes that score under a fixed line
//! budget. A SENSE + l1-wavelet FISTA solver scores the final masks.

pub mod cost;
pub mod error;
pub mod fft;
pub mod grappa;
pub mod io;
pub mod kspace;
mod linalg;
pub mod optimizer;
pub mod phantom;
pub mod recon;
pub mod rng;
pub mod testing;
pub mod trajectories;
pub mod wavelet;

pub use cost::{
    surrogate_cost, CoilCombine, CostConfig, CostContext, ErrorTransform, NormExponent,
};
pub use error::{Error, Result};
pub use grappa::{build_table, GrappaExtrapolationTable, GrappaOperator};
pub use kspace::{
    AcsSpec, CoilArray, ComplexImage, ErrorMode, GridSpec, MultiCoilKspace, SamplingMask,
};
pub use optimizer::{optimize, InitStrategy, OptimizationTrace, OptimizerConfig};
pub use phantom::{CoilModel, PhantomDataset, PhantomSpec};
pub use recon::{evaluate_trajectory, EvaluationReport, Lambda, ReconConfig};
pub use trajectories::TrajectoryBudget;

pub use num_complex::Complex64;
