//! Penalties and the adversarial training loop.

mod gan;
mod penalty;

pub use gan::{
    continue_deep_hedge, generator_gradient, generator_noise_seed, hedger_noise_seed, robust_objective,
    train_robust_gan, write_history_csv, EpochRecord, GanConfig, GanRun, GeneratorGradient, ObjectiveBreakdown,
    MIN_GAN_BATCH,
};
pub use penalty::{penalty_hms, penalty_vol_mse, PenaltySpec};
