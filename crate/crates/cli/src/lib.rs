//! Experiment orchestration for the robust hedging studies.

pub mod config;
pub mod error;
pub mod pipeline;

// glibc returns large freed blocks to the kernel, and the tape reallocates
// them every step
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub use config::{ExperimentConfig, Study};
pub use error::{CliError, CliResult};
pub use pipeline::{load_strategy, Manifest, Pipeline, StrategyEntry, SummaryRow, FAILURE_REPORT, MANIFEST};
