//! Fixtures shared by the pipeline benchmarks.

use outcomes_core::phantom::generate_dataset;
use outcomes_core::{
    AcsSpec, CoilModel, CostConfig, CostContext, GridSpec, PhantomDataset, PhantomSpec,
};

pub const ACS: AcsSpec = AcsSpec { width: 24 };
pub const D_MAX: usize = 4;
pub const KX_WINDOW: usize = 3;

/// Noiseless phantom of `size × size` with `coils` coils and one contrast.
pub fn dataset(size: usize, coils: usize) -> PhantomDataset {
    let spec =
        PhantomSpec::with_contrasts(GridSpec::new(size, size, coils).expect("grid"), 1, 0.0, 0);
    generate_dataset(&spec, &CoilModel::ring(coils, 0.6)).expect("phantom")
}

pub fn context(data: &PhantomDataset) -> CostContext {
    CostContext::build(
        data.kspaces[0].clone(),
        &ACS,
        D_MAX,
        KX_WINDOW,
        CostConfig::default(),
    )
    .expect("context")
}
