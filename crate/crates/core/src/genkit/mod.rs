//! Brownian noise, path generators for Black-Scholes, Heston and neural SDE
//! dynamics, and generator calibration.

mod calibrate;
mod generate;
mod grid;
mod noise;
mod params;
mod paths;

pub use calibrate::{calibrate, realized_vol, Calibration, CalibrationMethod, CalibrationTarget, SigFitConfig};
pub use generate::BoundGenerator;
pub use grid::TimeGrid;
pub use noise::{derive_seed, path_rng, sample_noise, standard_normals, NoiseBatch};
pub use params::{read_params_csv, write_params_csv, BsParams, GeneratorParams, HestonParams, NsdeParams, SIGMA_FLOOR};
pub use paths::{ChannelRole, PathBatch, PathBatchHeader, PathVar};
