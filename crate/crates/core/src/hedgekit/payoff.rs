use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::genkit::{PathBatch, PathVar};
use crate::nnkit::{GatherMap, GatherSrc, Var};

/// European claim on the first asset channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payoff {
    /// `(S_T − K)⁺`
    Call { strike: f64 },
    /// `S_T − K`
    Forward { strike: f64 },
    /// No claim.
    Zero,
}

impl Payoff {
    pub fn call(strike: f64) -> Self {
        Payoff::Call { strike }
    }

    fn apply(&self, s: f64) -> f64 {
        match *self {
            Payoff::Call { strike } => (s - strike).max(0.0),
            Payoff::Forward { strike } => s - strike,
            Payoff::Zero => 0.0,
        }
    }

    /// Per-path payoff.
    pub fn values(&self, batch: &PathBatch) -> Result<Vec<f64>> {
        let c = batch.asset_channel()?;
        Ok(batch.terminal(c).into_iter().map(|s| self.apply(s)).collect())
    }

    /// Per-path payoff as a `[B × 1]` node.
    pub fn on_tape<'t>(&self, paths: &PathVar<'t>) -> Result<Var<'t>> {
        let c = paths.asset_channel()?;
        let b = paths.batch();
        let width = paths.points() * paths.dims();
        let col = paths.col(paths.steps, c);
        let src = (0..b).map(|i| GatherSrc::Input(i * width + col)).collect();
        let terminal = paths.values.gather(Rc::new(GatherMap { rows: b, cols: 1, src }))?;
        Ok(match *self {
            Payoff::Call { strike } => terminal.add_scalar(-strike).relu(),
            Payoff::Forward { strike } => terminal.add_scalar(-strike),
            Payoff::Zero => terminal.scale(0.0),
        })
    }
}

/// `max(S_T − K, 0)` on the asset channel.
pub fn payoff_call(batch: &PathBatch, strike: f64) -> Result<Vec<f64>> {
    Payoff::call(strike).values(batch)
}
