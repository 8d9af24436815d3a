//! Fitting generator parameters to target data.

use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use super::noise::{derive_seed, sample_noise};
use super::params::GeneratorParams;
use super::paths::PathBatch;
use crate::error::{invalid, Error, Result};
use crate::nnkit::{OptState, Tape};
use crate::sigkit::{expected_signature, sig_mmd_on_tape, Augmentation, DEFAULT_CHAIN, DEFAULT_DEPTH};

/// What the generator is calibrated against.
#[derive(Debug, Clone, Copy)]
pub enum CalibrationTarget<'a> {
    Paths(&'a PathBatch),
    /// An annualised realised volatility.
    RealizedVol(f64),
}

/// Settings for fitting an NSDE by gradient descent on SigMMD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigFitConfig {
    pub depth: usize,
    pub chain: Vec<Augmentation>,
    pub batch: usize,
    pub max_iter: usize,
    pub lr: f64,
    /// Plateau is declared when the mean objective over the last `window`
    /// iterations improves on the previous window by less than `tol` (relative).
    pub window: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SigFitConfig {
    fn default() -> Self {
        Self {
            depth: DEFAULT_DEPTH,
            chain: DEFAULT_CHAIN.to_vec(),
            batch: 512,
            max_iter: 2000,
            lr: 1e-3,
            window: 50,
            tol: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum CalibrationMethod {
    RealizedVol,
    SigMmdGradient(SigFitConfig),
    Fixed,
}

/// Result of a calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: GeneratorParams,
    /// Final objective (zero for closed-form methods).
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the fit landed on a boundary of the parameter set, e.g. σ = 0.
    pub degenerate: bool,
    pub history: Vec<f64>,
}

impl Calibration {
    fn closed_form(params: GeneratorParams, degenerate: bool) -> Self {
        Self {
            params,
            objective: 0.0,
            initial_objective: 0.0,
            iterations: 0,
            converged: true,
            degenerate,
            history: Vec::new(),
        }
    }

    /// Turns a fit that hit the iteration cap into an error.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { iterations: self.iterations, objective: self.objective })
        }
    }
}

/// Annualised standard deviation (unbiased) of the pooled one-step log-returns
/// of channel `channel`.
pub fn realized_vol(batch: &PathBatch, channel: usize, dt: f64) -> Result<f64> {
    let mut returns = Vec::with_capacity(batch.batch() * batch.steps());
    for b in 0..batch.batch() {
        for n in 0..batch.steps() {
            let (a, z) = (batch.get(b, n, channel), batch.get(b, n + 1, channel));
            if a <= 0.0 || z <= 0.0 {
                return Err(invalid(format!("non-positive asset value in path {b}")));
            }
            returns.push((z / a).ln());
        }
    }
    if returns.len() < 2 {
        return Err(invalid("need at least two log-returns"));
    }
    Ok(crate::evalkit::sample_std(&returns) / dt.sqrt())
}

/// Calibrates `initial` (which fixes the family and any non-fitted fields) to `target`.
pub fn calibrate(
    initial: &GeneratorParams,
    target: CalibrationTarget<'_>,
    method: &CalibrationMethod,
    grid: &TimeGrid,
) -> Result<Calibration> {
    initial.validate()?;
    match (initial, method) {
        (GeneratorParams::Bs(p), CalibrationMethod::RealizedVol) => {
            let sigma = match target {
                CalibrationTarget::RealizedVol(v) => {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(invalid(format!("realised volatility must be >= 0, got {v}")));
                    }
                    v
                }
                CalibrationTarget::Paths(batch) => realized_vol(batch, batch.asset_channel()?, grid.dt())?,
            };
            let s0 = match target {
                CalibrationTarget::Paths(batch) => batch.get(0, 0, batch.asset_channel()?),
                CalibrationTarget::RealizedVol(_) => p.s0,
            };
            Ok(Calibration::closed_form(GeneratorParams::bs(sigma, s0), sigma == 0.0))
        }
        (GeneratorParams::Heston(_), CalibrationMethod::Fixed) => Ok(Calibration::closed_form(initial.clone(), false)),
        (GeneratorParams::Nsde(_), CalibrationMethod::SigMmdGradient(cfg)) => match target {
            CalibrationTarget::Paths(batch) => fit_sig_mmd(initial, batch, cfg, grid),
            CalibrationTarget::RealizedVol(_) => Err(invalid("NSDE calibration needs a target path batch")),
        },
        (p, m) => Err(invalid(format!("method {m:?} does not apply to a {} generator", p.variant()))),
    }
}

fn fit_sig_mmd(initial: &GeneratorParams, target: &PathBatch, cfg: &SigFitConfig, grid: &TimeGrid) -> Result<Calibration> {
    if cfg.batch < 2 || cfg.max_iter == 0 || cfg.window == 0 {
        return Err(invalid("SigMMD fit needs batch >= 2 and positive iteration counts"));
    }
    let dims = initial.roles().len();
    if target.dims() != dims || target.steps() != grid.steps() {
        return Err(Error::Shape(format!(
            "target has {} channels over {} steps, generator produces {dims} over {}",
            target.dims(),
            target.steps(),
            grid.steps()
        )));
    }
    let reference = expected_signature(target, cfg.depth, &cfg.chain)?;
    let channels: Vec<usize> = (0..dims).collect();
    let d = initial.noise_dim();
    let eval_noise = sample_noise(derive_seed(cfg.seed, &[0xe7a1]), cfg.batch, grid, d)?;

    let objective = |params: &GeneratorParams, noise: &super::noise::NoiseBatch| -> Result<f64> {
        let tape = Tape::new();
        let paths = params.bind(&tape, false)?.generate(noise, grid)?;
        Ok(sig_mmd_on_tape(paths.values, paths.points(), dims, &channels, &cfg.chain, &reference)?.item())
    };

    let mut params = initial.clone();
    let initial_objective = objective(&params, &eval_noise)?;
    let mut opt = OptState::new(params.trainable_tensors().iter(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.max_iter);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        let noise = sample_noise(derive_seed(cfg.seed, &[it as u64]), cfg.batch, grid, d)?;
        let tape = Tape::new();
        let bound = params.bind(&tape, true)?;
        let paths = bound.generate(&noise, grid)?;
        let loss = sig_mmd_on_tape(paths.values, paths.points(), dims, &channels, &cfg.chain, &reference)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Diverged { step: it, detail: "SigMMD objective is not finite".into() });
        }
        let grads = bound.gradients(&tape.gradient(loss)?);
        let mut tensors = params.trainable_tensors();
        {
            let mut refs: Vec<&mut _> = tensors.iter_mut().collect();
            opt.step(&mut refs, &grads)?;
        }
        params.set_trainable(&tensors)?;
        params.project();
        history.push(value);
        iterations = it + 1;
        let w = cfg.window;
        if history.len() >= 2 * w {
            let n = history.len();
            let recent: f64 = history[n - w..].iter().sum::<f64>() / w as f64;
            let before: f64 = history[n - 2 * w..n - w].iter().sum::<f64>() / w as f64;
            if recent >= (1.0 - cfg.tol) * before {
                converged = true;
                break;
            }
        }
    }
    let objective = objective(&params, &eval_noise)?;
    Ok(Calibration { params, objective, initial_objective, iterations, converged, degenerate: false, history })
}
