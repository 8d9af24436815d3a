//! Deep-hedge training on a fixed (or pooled) market measure.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::payoff::Payoff;
use super::risk::RiskMeasureSpec;
use super::strategy::{Feature, StrategySpec};
use crate::error::{invalid, Error, Result};
use crate::genkit::{derive_seed, sample_noise, GeneratorParams, NoiseBatch, PathBatch, PathVar, TimeGrid};
use crate::nnkit::{load_checkpoint, save_checkpoint, OptState, Tape, Tensor, Var};

/// Escalating-batch schedule: for each batch size, `passes` sweeps over a
/// freshly generated pool of `pool` paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub pool: usize,
    pub batches: Vec<usize>,
    pub passes: usize,
    pub lr: f64,
    /// Paths used for the final objective.
    pub eval_paths: usize,
    /// Largest batch put on one tape; bigger batches are processed in chunks.
    pub chunk: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            pool: 1 << 16,
            batches: vec![1 << 8, 1 << 10, 1 << 12, 1 << 14],
            passes: 5,
            lr: 1e-3,
            eval_paths: 1 << 14,
            chunk: 4096,
        }
    }
}

/// Smallest pool a scaled schedule is allowed to shrink to.
pub const MIN_POOL: usize = 256;

impl TrainSchedule {
    /// Shrinks the pool by `scale` (floored at [`MIN_POOL`]); batch sizes are
    /// capped at the new pool size.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(invalid(format!("scale must lie in (0, 1], got {scale}")));
        }
        let pool = ((self.pool as f64 * scale).round() as usize).max(MIN_POOL).min(self.pool);
        let mut batches: Vec<usize> = self.batches.iter().map(|&b| b.min(pool)).collect();
        batches.dedup();
        Ok(Self { pool, batches, ..self.clone() })
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool == 0 || self.passes == 0 || self.batches.is_empty() || self.batches.contains(&0) {
            return Err(invalid("schedule needs a positive pool, passes and batch sizes"));
        }
        if self.eval_paths == 0 || self.chunk == 0 {
            return Err(invalid("schedule needs positive eval_paths and chunk"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    /// Number of optimiser steps the schedule performs.
    pub fn steps(&self) -> usize {
        self.batches.iter().map(|b| self.pool.div_ceil(*b)).sum::<usize>() * self.passes
    }
}

/// Claim, risk functional and trading dates of a hedging problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeTask {
    pub grid: TimeGrid,
    pub risk: RiskMeasureSpec,
    pub payoff: Payoff,
}

impl HedgeTask {
    /// At-the-money call over 18 steps of 5/255 years with entropic risk, λ = 130.
    pub fn bs_study() -> Self {
        Self {
            grid: TimeGrid::uniform(5.0 / 255.0, 18).expect("valid grid"),
            risk: RiskMeasureSpec::entropic(130.0),
            payoff: Payoff::call(1.0),
        }
    }

    pub fn with_payoff(&self, payoff: Payoff) -> Self {
        Self { payoff, ..self.clone() }
    }

    /// `[B × 1]` hedged P&L `(φ·S)_T − C_T`.
    pub fn pnl_on_tape<'t>(&self, strategy: &StrategySpec, tape: &'t Tape, paths: &PathVar<'t>, trainable: bool) -> Result<(Var<'t>, crate::nnkit::BoundMlp<'t>)> {
        let bound = strategy.bind(tape, trainable);
        let gains = bound.gains(paths, &self.grid)?;
        let pnl = gains.sub(&self.payoff.on_tape(paths)?)?;
        Ok((pnl, bound.net))
    }

    /// Per-path hedged P&L, computed `chunk` paths at a time.
    pub fn pnl(&self, strategy: &StrategySpec, batch: &PathBatch, chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(batch.batch());
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < batch.batch() {
            let part = batch.slice(start, chunk.min(batch.batch() - start))?;
            let tape = Tape::new();
            let paths = PathVar::constant(&tape, &part);
            let (pnl, _) = self.pnl_on_tape(strategy, &tape, &paths, false)?;
            out.extend_from_slice(pnl.value().data());
            start += part.batch();
        }
        Ok(out)
    }

    /// Hedger loss `Û((φ·S)_T − C_T)` on a batch.
    pub fn loss(&self, strategy: &StrategySpec, batch: &PathBatch, chunk: usize) -> Result<f64> {
        self.risk.loss(&self.pnl(strategy, batch, chunk)?)
    }

    /// Loss and its gradient with respect to the strategy weights. Batches
    /// above `chunk` paths take two passes: the P&L first, then one tape per
    /// chunk weighted by `∂loss/∂pnl`.
    pub fn loss_gradient(&self, strategy: &StrategySpec, batch: &PathBatch, chunk: usize) -> Result<(f64, Vec<Tensor>)> {
        if batch.batch() <= chunk {
            let tape = Tape::new();
            let paths = PathVar::constant(&tape, batch);
            let (pnl, net) = self.pnl_on_tape(strategy, &tape, &paths, true)?;
            let loss = self.risk.loss_on_tape(pnl)?.scale(self.risk.orientation());
            let value = loss.item();
            return Ok((value, net.gradients(&tape.gradient(loss)?)));
        }
        let pnl = self.pnl(strategy, batch, chunk)?;
        let (value, weights) = {
            let tape = Tape::new();
            let x = tape.param(Tensor::column(pnl));
            let loss = self.risk.loss_on_tape(x)?.scale(self.risk.orientation());
            (loss.item(), tape.gradient(loss)?.wrt(x))
        };
        let mut total: Option<Vec<Tensor>> = None;
        let mut start = 0;
        while start < batch.batch() {
            let len = chunk.min(batch.batch() - start);
            let part = batch.slice(start, len)?;
            let tape = Tape::new();
            let paths = PathVar::constant(&tape, &part);
            let (pnl, net) = self.pnl_on_tape(strategy, &tape, &paths, true)?;
            let w = tape.constant(Tensor::column(weights.data()[start..start + len].to_vec()));
            let out = pnl.mul(&w)?.sum();
            let grads = net.gradients(&tape.gradient(out)?);
            match total.as_mut() {
                None => total = Some(grads),
                Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
            start += len;
        }
        Ok((value, total.unwrap_or_default()))
    }
}

/// One Adam step of the hedger on `batch`; returns the pre-step loss.
pub fn hedger_step(
    strategy: &mut StrategySpec,
    opt: &mut OptState,
    task: &HedgeTask,
    batch: &PathBatch,
    chunk: usize,
) -> Result<f64> {
    let (loss, grads) = task.loss_gradient(strategy, batch, chunk)?;
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            step: opt.step_count() as usize,
            detail: format!("hedger loss {loss} or its gradient is not finite"),
        });
    }
    let mut refs = strategy.net.tensors_mut();
    opt.step(&mut refs, &grads)?;
    Ok(loss)
}

/// Market measure the hedger trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "generators", rename_all = "kebab-case")]
pub enum TrainingMeasure {
    Single(GeneratorParams),
    /// Uniform mixture: each path picks a scenario, then is drawn from it.
    Pooled(Vec<GeneratorParams>),
}

impl TrainingMeasure {
    pub fn generators(&self) -> &[GeneratorParams] {
        match self {
            TrainingMeasure::Single(g) => std::slice::from_ref(g),
            TrainingMeasure::Pooled(g) => g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gens = self.generators();
        if gens.is_empty() {
            return Err(Error::Empty("scenario pool".into()));
        }
        let roles = gens[0].roles();
        for g in gens {
            g.validate()?;
            if g.roles() != roles {
                return Err(invalid("pooled generators must share one channel layout"));
            }
        }
        Ok(())
    }

    pub fn noise_dim(&self) -> usize {
        self.generators()[0].noise_dim()
    }

    /// Draws `n` paths.
    pub fn sample(&self, seed: u64, n: usize, grid: &TimeGrid) -> Result<PathBatch> {
        let noise = sample_noise(seed, n, grid, self.noise_dim())?;
        self.generate(&noise, grid, seed)
    }

    /// Maps noise to paths; `seed` drives the scenario assignment of pooled measures.
    pub fn generate(&self, noise: &NoiseBatch, grid: &TimeGrid, seed: u64) -> Result<PathBatch> {
        let gens = match self {
            TrainingMeasure::Single(g) => return g.generate(noise, grid),
            TrainingMeasure::Pooled(g) if g.len() == 1 => return g[0].generate(noise, grid),
            TrainingMeasure::Pooled(g) => g,
        };
        let n = noise.batch();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5ce7a810]));
        let pick: Vec<usize> = (0..n).map(|_| rng.gen_range(0..gens.len())).collect();
        let roles = gens[0].roles();
        let width = grid.points() * roles.len();
        let mut values = vec![0.0; n * width];
        for (m, g) in gens.iter().enumerate() {
            let rows: Vec<usize> = (0..n).filter(|&i| pick[i] == m).collect();
            if rows.is_empty() {
                continue;
            }
            let part = g.generate(&noise.select(&rows), grid)?;
            for (j, &i) in rows.iter().enumerate() {
                values[i * width..(i + 1) * width].copy_from_slice(part.path(j));
            }
        }
        PathBatch::new(values, n, grid.steps(), roles)
    }
}

/// A trained hedge together with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeRun {
    pub strategy: StrategySpec,
    pub measure: TrainingMeasure,
    pub task: HedgeTask,
    pub schedule: TrainSchedule,
    pub seed: u64,
    pub steps: usize,
    /// Loss on `schedule.eval_paths` fresh paths after training.
    pub final_objective: f64,
    /// Pre-step loss of every optimiser step.
    pub history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HedgeRunMeta {
    features: Vec<Feature>,
    traded: Vec<usize>,
    measure: TrainingMeasure,
    task: HedgeTask,
    schedule: TrainSchedule,
    seed: u64,
    steps: usize,
    final_objective: f64,
    history: Vec<f64>,
}

pub const HEDGER_CHECKPOINT: &str = "hedger.ckpt";
pub const HEDGE_RUN_META: &str = "hedge_run.json";

impl HedgeRun {
    /// Writes `hedger.ckpt` and `hedge_run.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_checkpoint(&dir.join(HEDGER_CHECKPOINT), &self.strategy.net, self.seed, self.steps as u64)?;
        let meta = HedgeRunMeta {
            features: self.strategy.features.clone(),
            traded: self.strategy.traded.clone(),
            measure: self.measure.clone(),
            task: self.task.clone(),
            schedule: self.schedule.clone(),
            seed: self.seed,
            steps: self.steps,
            final_objective: self.final_objective,
            history: self.history.clone(),
        };
        fs::write(dir.join(HEDGE_RUN_META), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (net, _) = load_checkpoint(&dir.join(HEDGER_CHECKPOINT))?;
        let meta: HedgeRunMeta = serde_json::from_str(&fs::read_to_string(dir.join(HEDGE_RUN_META))?)?;
        let strategy = StrategySpec { net, features: meta.features, traded: meta.traded };
        strategy.validate(&meta.measure.generators()[0].roles())?;
        Ok(Self {
            strategy,
            measure: meta.measure,
            task: meta.task,
            schedule: meta.schedule,
            seed: meta.seed,
            steps: meta.steps,
            final_objective: meta.final_objective,
            history: meta.history,
        })
    }
}

/// Seed of the pool regenerated for `(stage, pass)`.
pub fn pool_seed(seed: u64, stage: usize, pass: usize) -> u64 {
    derive_seed(seed, &[1, stage as u64, pass as u64])
}

/// Seed of the final evaluation sample.
pub fn eval_seed(seed: u64) -> u64 {
    derive_seed(seed, &[2])
}

/// Trains `init` on `measure` under `schedule`.
pub fn train_on_measure(
    init: StrategySpec,
    measure: TrainingMeasure,
    task: &HedgeTask,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<HedgeRun> {
    schedule.validate()?;
    measure.validate()?;
    task.risk.validate()?;
    init.validate(&measure.generators()[0].roles())?;
    let mut strategy = init;
    let mut opt = OptState::new(strategy.net.tensors(), schedule.lr);
    let mut history = Vec::with_capacity(schedule.steps());
    for (stage, &size) in schedule.batches.iter().enumerate() {
        for pass in 0..schedule.passes {
            let pool = measure.sample(pool_seed(seed, stage, pass), schedule.pool, &task.grid)?;
            let mut start = 0;
            while start < schedule.pool {
                let batch = pool.slice(start, size.min(schedule.pool - start))?;
                history.push(hedger_step(&mut strategy, &mut opt, task, &batch, schedule.chunk)?);
                start += size;
            }
        }
    }
    let eval = measure.sample(eval_seed(seed), schedule.eval_paths, &task.grid)?;
    let final_objective = task.loss(&strategy, &eval, schedule.chunk)?;
    Ok(HedgeRun {
        strategy,
        measure,
        task: task.clone(),
        schedule: schedule.clone(),
        seed,
        steps: history.len(),
        final_objective,
        history,
    })
}

/// Deep hedge under one generator, starting from the default strategy for it.
pub fn train_deep_hedge(
    generator: &GeneratorParams,
    task: &HedgeTask,
    schedule: &TrainSchedule,
    hidden: &[usize],
    seed: u64,
) -> Result<HedgeRun> {
    let init = StrategySpec::default_for(generator, hidden, derive_seed(seed, &[0]))?;
    train_on_measure(init, TrainingMeasure::Single(generator.clone()), task, schedule, seed)
}

/// Outcome of the two-run indifference-price procedure.
#[derive(Debug, Clone)]
pub struct IndifferencePrice {
    /// `π(−C_T) − π(0)`
    pub price: f64,
    pub with_claim: HedgeRun,
    pub without_claim: HedgeRun,
}

/// Trains with and without the claim from the same initial weights and
/// seed, and differences the optimised objectives.
pub fn indifference_price(
    init: &StrategySpec,
    measure: &TrainingMeasure,
    task: &HedgeTask,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<IndifferencePrice> {
    let with_claim = train_on_measure(init.clone(), measure.clone(), task, schedule, seed)?;
    let without_claim = train_on_measure(init.clone(), measure.clone(), &task.with_payoff(Payoff::Zero), schedule, seed)?;
    Ok(IndifferencePrice { price: with_claim.final_objective - without_claim.final_objective, with_claim, without_claim })
}
