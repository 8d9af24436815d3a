//! Out-of-sample evaluation, scenario construction and the PDE benchmark.

mod oosp;
mod pde;
mod scenarios;
mod stats;

pub use oosp::{
    forward_bs_scenarios, forward_oosp, oosp, scenario_seed, train_test_hedge, OospReport, OospSummary, MIN_EVAL_PATHS,
};
pub use pde::{compare_to_hms, hms_pde_solve, spatial_convergence_order, HmsComparison, HmsRow, PdeGrid, PdeSpec};
pub use scenarios::{
    bs_scenario_draws, build_bs_scenarios, build_heston_scenarios, build_heston_scenarios_from_file, inverse_calibrate_bs,
    ScenarioProvenance, ScenarioSet,
};
pub use stats::{kolmogorov_survival, ks_two_sample, mean, pearson, sample_std, KsTest};
