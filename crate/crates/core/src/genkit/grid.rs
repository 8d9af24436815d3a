use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform trading grid `t_n = t0 + n·dt`, `n = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(t0 >= 0.0 && t0.is_finite()) {
            return Err(invalid(format!("start time must be finite and >= 0, got {t0}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(invalid("time grid needs at least one step"));
        }
        Ok(Self { t0, dt, steps })
    }

    /// Grid starting at 0 with `steps` steps of `dt`.
    pub fn uniform(dt: f64, steps: usize) -> Result<Self> {
        Self::new(0.0, dt, steps)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn points(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn maturity(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }
}
