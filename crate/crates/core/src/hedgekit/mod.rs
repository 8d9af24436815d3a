//! Hedging strategies, payoffs, risk functionals and the deep-hedge trainer.

mod bs;
mod payoff;
mod risk;
mod strategy;
mod train;

pub use bs::{bs_call_delta, bs_call_gamma, bs_call_price};
pub use payoff::{payoff_call, Payoff};
pub use risk::{oce_weighted, PiecewiseLinear, RiskMeasureSpec};
pub use strategy::{gains_from_positions, BoundStrategy, Feature, StrategySpec, DEFAULT_HIDDEN};
pub use train::{
    eval_seed, hedger_step, indifference_price, pool_seed, train_deep_hedge, train_on_measure, HedgeRun, HedgeTask,
    IndifferencePrice, TrainSchedule, TrainingMeasure, HEDGER_CHECKPOINT, HEDGE_RUN_META, MIN_POOL,
};
