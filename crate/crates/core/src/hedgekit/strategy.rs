//! Hedging strategies: one network shared by all trading dates, fed with
//! normalised time and the observable channels.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::genkit::{ChannelRole, GeneratorParams, PathBatch, PathVar, TimeGrid};
use crate::nnkit::{BoundMlp, GatherMap, GatherSrc, MlpParams, Tape, Tensor, Var};

/// One network input. Channels are written `s1`, `s2`, … (one-based) in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Feature {
    /// `t_n / T`
    Time,
    /// Raw level of a path channel at `t_n`.
    Channel(usize),
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Time => f.write_str("time"),
            Feature::Channel(c) => write!(f, "s{}", c + 1),
        }
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "time" || s == "t" {
            return Ok(Feature::Time);
        }
        match s.strip_prefix('s').and_then(|n| n.parse::<usize>().ok()) {
            Some(n) if n >= 1 => Ok(Feature::Channel(n - 1)),
            _ => Err(invalid(format!("unknown feature '{s}', expected 'time' or s1, s2, ..."))),
        }
    }
}

impl TryFrom<String> for Feature {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Feature> for String {
    fn from(f: Feature) -> String {
        f.to_string()
    }
}

/// Network, its inputs, and the channels it trades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub net: MlpParams,
    pub features: Vec<Feature>,
    pub traded: Vec<usize>,
}

/// Hidden layers of the hedging network.
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];

impl StrategySpec {
    pub fn new(features: Vec<Feature>, traded: Vec<usize>, hidden: &[usize], seed: u64) -> Result<Self> {
        if features.is_empty() || traded.is_empty() {
            return Err(invalid("a strategy needs at least one feature and one traded channel"));
        }
        let mut sizes = vec![features.len()];
        sizes.extend_from_slice(hidden);
        sizes.push(traded.len());
        Ok(Self { net: MlpParams::init(&sizes, seed)?, features, traded })
    }

    /// Default inputs per generator: (t/T, S¹) for BS and NSDE, (t/T, S¹, S²)
    /// for Heston; every tradable channel is traded except for NSDE, where
    /// only the first component is.
    pub fn default_for(generator: &GeneratorParams, hidden: &[usize], seed: u64) -> Result<Self> {
        let (features, traded) = match generator {
            GeneratorParams::Bs(_) | GeneratorParams::Nsde(_) => (vec![Feature::Time, Feature::Channel(0)], vec![0]),
            GeneratorParams::Heston(_) => {
                (vec![Feature::Time, Feature::Channel(0), Feature::Channel(1)], vec![0, 2])
            }
        };
        Self::new(features, traded, hidden, seed)?.centered_at(&generator.initial_state())
    }

    /// Moves the first-layer kinks to the typical inputs: `t/T = ½` and the
    /// channel levels in `state`.
    pub fn centered_at(mut self, state: &[f64]) -> Result<Self> {
        let center = self
            .features
            .iter()
            .map(|f| match f {
                Feature::Time => Ok(0.5),
                Feature::Channel(c) => {
                    state.get(*c).copied().ok_or_else(|| invalid(format!("state has no channel s{}", c + 1)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.net.center_inputs(&center)?;
        Ok(self)
    }

    /// Checks the strategy against a path layout.
    pub fn validate(&self, roles: &[ChannelRole]) -> Result<()> {
        if self.net.input_dim() != self.features.len() {
            return Err(Error::Shape(format!(
                "network takes {} inputs for {} features",
                self.net.input_dim(),
                self.features.len()
            )));
        }
        if self.net.output_dim() != self.traded.len() {
            return Err(Error::Shape(format!(
                "network outputs {} positions for {} traded channels",
                self.net.output_dim(),
                self.traded.len()
            )));
        }
        for f in &self.features {
            if let Feature::Channel(c) = f {
                if *c >= roles.len() {
                    return Err(invalid(format!("feature {f} refers to a missing channel")));
                }
            }
        }
        for &c in &self.traded {
            match roles.get(c) {
                Some(r) if r.tradable() => {}
                Some(r) => return Err(invalid(format!("channel s{} ({r:?}) is not tradable", c + 1))),
                None => return Err(invalid(format!("traded channel s{} does not exist", c + 1))),
            }
        }
        Ok(())
    }

    /// Positions for explicit feature rows `[rows × features]`.
    pub fn positions_for(&self, features: &Tensor) -> Result<Tensor> {
        self.net.forward_batch(features)
    }

    /// Positions at normalised time `time_frac` given channel levels `state`.
    pub fn position_at(&self, time_frac: f64, state: &[f64]) -> Result<Vec<f64>> {
        let row = self
            .features
            .iter()
            .map(|f| match f {
                Feature::Time => Ok(time_frac),
                Feature::Channel(c) => {
                    state.get(*c).copied().ok_or_else(|| invalid(format!("state has no channel s{}", c + 1)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.net.forward(&row)
    }

    pub fn bind<'s, 't>(&'s self, tape: &'t Tape, trainable: bool) -> BoundStrategy<'s, 't> {
        BoundStrategy { net: self.net.bind(tape, trainable), spec: self }
    }

    /// Per-path trading gains `Σ_n φ(t_n, ·)ᵀ (S_{n+1} − S_n)`.
    pub fn trading_gains(&self, batch: &PathBatch, grid: &TimeGrid) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let paths = PathVar::constant(&tape, batch);
        let g = self.bind(&tape, false).gains(&paths, grid)?;
        let v = g.value().data().to_vec();
        Ok(v)
    }
}

/// A strategy whose weights live on a tape.
pub struct BoundStrategy<'s, 't> {
    pub net: BoundMlp<'t>,
    spec: &'s StrategySpec,
}

impl<'t> BoundStrategy<'_, 't> {
    /// Network inputs at every decision date, rows ordered `b·N + n`.
    pub fn features(&self, paths: &PathVar<'t>, grid: &TimeGrid) -> Result<Var<'t>> {
        check_grid(paths, grid)?;
        let (b, n) = (paths.batch(), paths.steps);
        let width = paths.points() * paths.dims();
        let f = self.spec.features.len();
        let maturity = grid.maturity();
        let mut src = Vec::with_capacity(b * n * f);
        for i in 0..b {
            for k in 0..n {
                for feat in &self.spec.features {
                    src.push(match feat {
                        Feature::Time => GatherSrc::Const(grid.time(k) / maturity),
                        Feature::Channel(c) => GatherSrc::Input(i * width + paths.col(k, *c)),
                    });
                }
            }
        }
        paths.values.gather(Rc::new(GatherMap { rows: b * n, cols: f, src }))
    }

    /// Positions `[B·N × traded]`.
    pub fn positions(&self, paths: &PathVar<'t>, grid: &TimeGrid) -> Result<Var<'t>> {
        self.spec.validate(&paths.roles)?;
        self.net.forward(self.features(paths, grid)?)
    }

    /// Per-path gains `[B × 1]`.
    pub fn gains(&self, paths: &PathVar<'t>, grid: &TimeGrid) -> Result<Var<'t>> {
        let pos = self.positions(paths, grid)?;
        gains_from_positions(paths, &self.spec.traded, pos)
    }
}

fn check_grid(paths: &PathVar<'_>, grid: &TimeGrid) -> Result<()> {
    if paths.steps != grid.steps() {
        return Err(Error::Shape(format!("paths have {} steps, grid has {}", paths.steps, grid.steps())));
    }
    Ok(())
}

/// Gains of positions `[B·N × traded]` (rows `b·N + n`) against the traded
/// channels' increments.
pub fn gains_from_positions<'t>(paths: &PathVar<'t>, traded: &[usize], positions: Var<'t>) -> Result<Var<'t>> {
    let (b, n, d) = (paths.batch(), paths.steps, traded.len());
    if positions.shape() != (b * n, d) {
        return Err(Error::Shape(format!("positions {:?} for {b} paths × {n} steps × {d}", positions.shape())));
    }
    let width = paths.points() * paths.dims();
    let index = |shift: usize| {
        let mut src = Vec::with_capacity(b * n * d);
        for i in 0..b {
            for k in 0..n {
                for &c in traded {
                    src.push(GatherSrc::Input(i * width + paths.col(k + shift, c)));
                }
            }
        }
        Rc::new(GatherMap { rows: b * n, cols: d, src })
    };
    let increments = paths.values.gather(index(1))?.sub(&paths.values.gather(index(0))?)?;
    Ok(positions.mul(&increments)?.reshape(b, n * d)?.sum_cols())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genkit::{sample_noise, GeneratorParams};
    use crate::nnkit::Dense;

    fn constant_strategy(value: f64) -> StrategySpec {
        let net = MlpParams::from_layers(vec![Dense { weight: Tensor::zeros(2, 1), bias: Tensor::scalar(value) }]).unwrap();
        StrategySpec { net, features: vec![Feature::Time, Feature::Channel(0)], traded: vec![0] }
    }

    #[test]
    fn unit_position_telescopes() {
        let g = TimeGrid::uniform(0.02, 6).unwrap();
        let batch = GeneratorParams::bs(0.3, 1.0).generate(&sample_noise(1, 5, &g, 1).unwrap(), &g).unwrap();
        let gains = constant_strategy(1.0).trading_gains(&batch, &g).unwrap();
        for (b, v) in gains.iter().enumerate() {
            assert!((v - (batch.get(b, 6, 0) - 1.0)).abs() < 1e-14);
        }
        assert!(constant_strategy(0.0).trading_gains(&batch, &g).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_names_round_trip() {
        for f in [Feature::Time, Feature::Channel(0), Feature::Channel(2)] {
            assert_eq!(f.to_string().parse::<Feature>().unwrap(), f);
        }
        assert!("x1".parse::<Feature>().is_err());
        assert!("s0".parse::<Feature>().is_err());
    }

    #[test]
    fn non_tradable_channel_is_rejected() {
        let h = GeneratorParams::heston(1.0, 0.04, 0.2, 0.0, 1.0);
        let mut s = StrategySpec::default_for(&h, &[4], 0).unwrap();
        assert!(s.validate(&h.roles()).is_ok());
        s.traded = vec![1, 2];
        assert!(s.validate(&h.roles()).is_err());
    }

    #[test]
    fn features_are_adapted() {
        // changing the path after t_k leaves every input up to t_k unchanged
        let g = TimeGrid::uniform(0.02, 4).unwrap();
        let batch = GeneratorParams::bs(0.3, 1.0).generate(&sample_noise(2, 1, &g, 1).unwrap(), &g).unwrap();
        let mut bumped = batch.values().to_vec();
        bumped[4] *= 1.5;
        let bumped = PathBatch::new(bumped, 1, 4, batch.roles().to_vec()).unwrap();
        let s = StrategySpec::new(vec![Feature::Time, Feature::Channel(0)], vec![0], &[8], 3).unwrap();
        let tape = Tape::new();
        let bound = s.bind(&tape, false);
        let a = bound.positions(&PathVar::constant(&tape, &batch), &g).unwrap();
        let b = bound.positions(&PathVar::constant(&tape, &bumped), &g).unwrap();
        assert_eq!(a.value().data()[..4], b.value().data()[..4]);
    }
}
