//! Out-of-sample performance of fixed strategies across scenario sets.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenarios::ScenarioSet;
use super::stats::{mean, sample_std};
use crate::error::{invalid, Error, Result};
use crate::genkit::{calibrate, derive_seed, sample_noise, CalibrationMethod, CalibrationTarget, GeneratorParams};
use crate::hedgekit::{train_on_measure, HedgeRun, HedgeTask, StrategySpec, TrainSchedule, TrainingMeasure};

/// Smallest evaluation batch accepted by [`oosp`].
pub const MIN_EVAL_PATHS: usize = 1000;

/// Per-scenario losses and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OospReport {
    pub strategy_id: String,
    pub eval_paths: usize,
    pub scenario_ids: Vec<usize>,
    pub param_summaries: Vec<String>,
    /// Euclidean parameter distance of each scenario to the reference, when known.
    pub distances: Vec<Option<f64>>,
    pub losses: Vec<f64>,
    pub mean: f64,
    /// Unbiased.
    pub std: f64,
    /// Scenarios that could not be evaluated, with the reason.
    pub skipped: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OospSummary {
    pub mean: f64,
    pub std: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub eval_paths: usize,
    pub strategy_id: String,
    pub skipped: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OospRow {
    scenario_id: usize,
    param_summary: String,
    distance_to_ref: Option<f64>,
    loss: f64,
}

impl OospReport {
    fn assemble(
        strategy_id: &str,
        eval_paths: usize,
        rows: Vec<(usize, String, Option<f64>, f64)>,
        skipped: Vec<(usize, String)>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty(format!("OOSP report for {strategy_id}: every scenario failed")));
        }
        let losses: Vec<f64> = rows.iter().map(|r| r.3).collect();
        Ok(Self {
            strategy_id: strategy_id.to_string(),
            eval_paths,
            scenario_ids: rows.iter().map(|r| r.0).collect(),
            param_summaries: rows.iter().map(|r| r.1.clone()).collect(),
            distances: rows.iter().map(|r| r.2).collect(),
            mean: mean(&losses),
            std: if losses.len() > 1 { sample_std(&losses) } else { 0.0 },
            losses,
            skipped,
        })
    }

    pub fn summary(&self) -> OospSummary {
        OospSummary {
            mean: self.mean,
            std: self.std,
            m: self.losses.len(),
            eval_paths: self.eval_paths,
            strategy_id: self.strategy_id.clone(),
            skipped: self.skipped.len(),
        }
    }

    /// `scenario_id,param_summary,distance_to_ref,loss`
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for i in 0..self.losses.len() {
            w.serialize(OospRow {
                scenario_id: self.scenario_ids[i],
                param_summary: self.param_summaries[i].clone(),
                distance_to_ref: self.distances[i],
                loss: self.losses[i],
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuilds a report from its CSV; summaries are recomputed.
    pub fn read_csv(input: impl Read, strategy_id: &str, eval_paths: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r
            .deserialize::<OospRow>()
            .map(|row| row.map(|x| (x.scenario_id, x.param_summary, x.distance_to_ref, x.loss)).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(strategy_id, eval_paths, rows, Vec::new())
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&self.summary())? + "\n")?;
        Ok(())
    }
}

/// Seed of the evaluation noise for scenario `m`; shared by every strategy
/// evaluated under the same `seed`.
pub fn scenario_seed(seed: u64, m: usize) -> u64 {
    derive_seed(seed, &[0x0005, m as u64])
}

/// Backward test: loss of one strategy under each scenario.
pub fn oosp(
    strategy_id: &str,
    strategy: &StrategySpec,
    scenarios: &ScenarioSet,
    reference: Option<&GeneratorParams>,
    task: &HedgeTask,
    eval_paths: usize,
    chunk: usize,
    seed: u64,
) -> Result<OospReport> {
    if eval_paths < MIN_EVAL_PATHS {
        return Err(invalid(format!("OOSP needs at least {MIN_EVAL_PATHS} evaluation paths, got {eval_paths}")));
    }
    if scenarios.is_empty() {
        return Err(Error::Empty("scenario set".into()));
    }
    let mut rows = Vec::with_capacity(scenarios.len());
    let mut skipped = Vec::new();
    for (m, params) in scenarios.params.iter().enumerate() {
        let eval = || -> Result<f64> {
            let noise = sample_noise(scenario_seed(seed, m), eval_paths, &task.grid, params.noise_dim())?;
            let paths = params.generate(&noise, &task.grid)?;
            task.loss(strategy, &paths, chunk)
        };
        match eval() {
            Ok(loss) => {
                let dist = reference.and_then(|r| params.distance(r).ok());
                rows.push((m, params.to_string(), dist, loss));
            }
            Err(e) => skipped.push((m, e.to_string())),
        }
    }
    OospReport::assemble(strategy_id, eval_paths, rows, skipped)
}

/// Forward test: strategy `m` (trained on scenario `m`) evaluated under the
/// reference model.
pub fn forward_oosp(
    strategy_id: &str,
    strategies: &[StrategySpec],
    reference: &GeneratorParams,
    task: &HedgeTask,
    eval_paths: usize,
    chunk: usize,
    seed: u64,
) -> Result<OospReport> {
    if strategies.is_empty() {
        return Err(Error::Empty("forward test strategies".into()));
    }
    let noise = sample_noise(scenario_seed(seed, 0), eval_paths, &task.grid, reference.noise_dim())?;
    let paths = reference.generate(&noise, &task.grid)?;
    let mut rows = Vec::with_capacity(strategies.len());
    let mut skipped = Vec::new();
    for (m, s) in strategies.iter().enumerate() {
        match task.loss(s, &paths, chunk) {
            Ok(loss) => rows.push((m, format!("strategy {m}"), None, loss)),
            Err(e) => skipped.push((m, e.to_string())),
        }
    }
    OospReport::assemble(strategy_id, eval_paths, rows, skipped)
}

/// Forward-test scenarios: `m` batches of `paths` reference paths, each
/// re-calibrated by realised volatility.
pub fn forward_bs_scenarios(reference: &GeneratorParams, paths: usize, m: usize, task: &HedgeTask, seed: u64) -> Result<ScenarioSet> {
    let mut params = Vec::with_capacity(m);
    for i in 0..m {
        let noise = sample_noise(derive_seed(seed, &[0x000f, i as u64]), paths, &task.grid, 1)?;
        let batch = reference.generate(&noise, &task.grid)?;
        params.push(calibrate(reference, CalibrationTarget::Paths(&batch), &CalibrationMethod::RealizedVol, &task.grid)?.params);
    }
    Ok(ScenarioSet { params, provenance: super::scenarios::ScenarioProvenance::BsInverse, dropped: 0 })
}

/// Deep hedge trained on the uniform mixture of all scenarios.
pub fn train_test_hedge(
    init: StrategySpec,
    scenarios: &ScenarioSet,
    task: &HedgeTask,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<HedgeRun> {
    if scenarios.is_empty() {
        return Err(Error::Empty("scenario set".into()));
    }
    train_on_measure(init, TrainingMeasure::Pooled(scenarios.params.clone()), task, schedule, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::build_bs_scenarios;
    use crate::hedgekit::{Feature, Payoff};
    use crate::nnkit::{Dense, MlpParams, Tensor};

    fn zero_strategy() -> StrategySpec {
        let net = MlpParams::from_layers(vec![Dense { weight: Tensor::zeros(2, 1), bias: Tensor::scalar(0.0) }]).unwrap();
        StrategySpec { net, features: vec![Feature::Time, Feature::Channel(0)], traded: vec![0] }
    }

    #[test]
    fn zero_strategy_loss_is_risk_of_short_payoff() {
        let task = HedgeTask::bs_study();
        let sc = build_bs_scenarios(0.2, 1.0, 45, 3, 1).unwrap();
        let r = oosp("zero", &zero_strategy(), &sc, None, &task, 1000, 4096, 7).unwrap();
        for (m, loss) in r.losses.iter().enumerate() {
            let noise = sample_noise(scenario_seed(7, m), 1000, &task.grid, 1).unwrap();
            let paths = sc.params[m].generate(&noise, &task.grid).unwrap();
            let short: Vec<f64> = Payoff::call(1.0).values(&paths).unwrap().iter().map(|c| -c).collect();
            assert_eq!(*loss, task.risk.loss(&short).unwrap());
        }
    }

    #[test]
    fn report_round_trips_and_is_consistent() {
        let task = HedgeTask::bs_study();
        let sc = build_bs_scenarios(0.2, 1.0, 45, 4, 2).unwrap();
        let r = oosp("zero", &zero_strategy(), &sc, Some(&GeneratorParams::bs(0.2, 1.0)), &task, 1000, 4096, 1).unwrap();
        assert!((r.mean - mean(&r.losses)).abs() < 1e-12);
        assert!((r.std - sample_std(&r.losses)).abs() < 1e-12);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("scenario_id,param_summary,distance_to_ref,loss\n"));
        let back = OospReport::read_csv(buf.as_slice(), "zero", 1000).unwrap();
        assert_eq!(back.losses, r.losses);
        assert_eq!(back.distances, r.distances);
    }

    #[test]
    fn small_eval_batches_are_rejected() {
        let sc = build_bs_scenarios(0.2, 1.0, 45, 1, 2).unwrap();
        assert!(oosp("z", &zero_strategy(), &sc, None, &HedgeTask::bs_study(), 999, 4096, 1).is_err());
    }
}
