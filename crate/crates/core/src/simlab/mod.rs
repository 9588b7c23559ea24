//! Simulation designs, samplers and experiment runners.

mod design;
mod experiments;
mod sampler;

pub use design::{simulate_dmf, FactorLaw, SimDesign, SimDraw};
pub use experiments::{
    dispersion_sensitivity_case, fit_and_test, fit_rank, median, power_cell_name, power_families, power_of,
    rank_cases, run_power_grid, run_rank_cases, run_significance, significance_cases, DispersionChoice, FitSpec,
    NamedFamily, PowerEntry, PowerGrid, Record, ResultTable, SignificanceCase, FIT_METRICS,
};
pub use sampler::sample;
