//! Rust side of the Python entry points.

use robhedge::evalkit::{self, ScenarioProvenance, ScenarioSet};
use robhedge::genkit::{derive_seed, ChannelRole, GeneratorParams, PathBatch, TimeGrid};
use robhedge::hedgekit::{self, bs_call_delta, bs_call_price, HedgeRun, HedgeTask, RiskMeasureSpec, StrategySpec, TrainSchedule};
use robhedge::sigkit::{self, augment, parse_chain, AugmentedPath};
use robhedge::{Error, Result};

pub fn sample(generator: &GeneratorParams, seed: u64, n: usize, dt: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let grid = TimeGrid::uniform(dt, steps)?;
    let batch = generator.sample(seed, n, &grid)?;
    let width = batch.points() * batch.dims();
    Ok(batch.values().chunks(width).map(<[f64]>::to_vec).collect())
}

pub fn signature(points: &[f64], dim: usize, depth: usize, augmentations: &[String]) -> Result<Vec<f64>> {
    let path = if augmentations.is_empty() {
        AugmentedPath::from_values(points.to_vec(), dim)?
    } else {
        augment(points, dim, &parse_chain(augmentations)?)?
    };
    Ok(sigkit::signature(&path, depth)?.into_coeffs())
}

fn batch(paths: &[Vec<f64>], dim: usize) -> Result<PathBatch> {
    let first = paths.first().ok_or_else(|| Error::Empty("path batch".into()))?;
    if dim == 0 || first.len() % dim != 0 || first.len() < 2 * dim {
        return Err(Error::Shape(format!("path of {} values is not a multiple of {dim} channels", first.len())));
    }
    if paths.iter().any(|p| p.len() != first.len()) {
        return Err(Error::Shape("paths must share one length".into()));
    }
    let values = paths.concat();
    PathBatch::new(values, paths.len(), first.len() / dim - 1, vec![ChannelRole::Hidden; dim])
}

pub fn sig_mmd(p: &[Vec<f64>], q: &[Vec<f64>], dim: usize, depth: usize, augmentations: &[String]) -> Result<f64> {
    sigkit::sig_mmd(&batch(p, dim)?, &batch(q, dim)?, depth, &parse_chain(augmentations)?)
}

pub fn entropic_risk(sample: &[f64], risk_aversion: f64) -> Result<f64> {
    RiskMeasureSpec::entropic(risk_aversion).value(sample)
}

pub fn bs_call(s: f64, strike: f64, sigma: f64, tau: f64) -> (f64, f64) {
    (bs_call_price(s, strike, sigma, tau), bs_call_delta(s, strike, sigma, tau))
}

pub fn train_deep_hedge(generator: &GeneratorParams, scale: f64, seed: u64, hidden: &[usize]) -> Result<HedgeRun> {
    let schedule = TrainSchedule::default().scaled(scale)?;
    hedgekit::train_deep_hedge(generator, &HedgeTask::bs_study(), &schedule, hidden, seed)
}

pub fn oosp(strategy: &StrategySpec, scenarios: Vec<GeneratorParams>, eval_paths: usize, seed: u64) -> Result<Vec<f64>> {
    let set = ScenarioSet { params: scenarios, provenance: ScenarioProvenance::File, dropped: 0 };
    let report = evalkit::oosp("python", strategy, &set, None, &HedgeTask::bs_study(), eval_paths, 4096, derive_seed(seed, &[500]))?;
    if let Some((m, why)) = report.skipped.first() {
        return Err(Error::InvalidInput(format!("scenario {m} failed: {why}")));
    }
    Ok(report.losses)
}
