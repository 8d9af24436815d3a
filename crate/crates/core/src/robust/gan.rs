//! The adversarial loop: the generator ascends `loss − penalty`, the hedger
//! descends the loss.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::penalty::PenaltySpec;
use crate::error::{invalid, Error, Result};
use crate::genkit::{derive_seed, sample_noise, GeneratorParams, NoiseBatch, PathBatch, PathVar};
use crate::hedgekit::{hedger_step, HedgeRun, HedgeTask, StrategySpec};
use crate::nnkit::{save_checkpoint, OptState, Tape, Tensor};

/// Hedge loss, penalty and their difference on one noise batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub loss: f64,
    pub penalty: f64,
    /// `loss − penalty`, the quantity the generator maximises.
    pub objective: f64,
}

impl ObjectiveBreakdown {
    fn new(loss: f64, penalty: f64) -> Result<Self> {
        let out = Self { loss, penalty, objective: loss - penalty };
        if !out.objective.is_finite() {
            return Err(Error::NonFinite(format!("robust objective: loss {loss}, penalty {penalty}")));
        }
        Ok(out)
    }
}

/// Gradients of the two objective terms with respect to the generator's
/// trainable tensors.
#[derive(Debug, Clone)]
pub struct GeneratorGradient {
    pub breakdown: ObjectiveBreakdown,
    pub loss_grad: Vec<Tensor>,
    pub penalty_grad: Vec<Tensor>,
}

fn norm(tensors: &[Tensor]) -> f64 {
    tensors.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

impl GeneratorGradient {
    pub fn loss_norm(&self) -> f64 {
        norm(&self.loss_grad)
    }

    pub fn penalty_norm(&self) -> f64 {
        norm(&self.penalty_grad)
    }

    /// Gradient of `loss − penalty`.
    pub fn objective_grad(&self) -> Vec<Tensor> {
        self.loss_grad
            .iter()
            .zip(&self.penalty_grad)
            .map(|(l, p)| {
                let mut g = p.map(|v| -v);
                g.add_assign(l);
                g
            })
            .collect()
    }
}

/// Value of the robust objective for fixed strategy and generator.
pub fn robust_objective(
    strategy: &StrategySpec,
    generator: &GeneratorParams,
    noise: &NoiseBatch,
    task: &HedgeTask,
    penalty: &PenaltySpec,
    chunk: usize,
) -> Result<ObjectiveBreakdown> {
    penalty.validate()?;
    let paths = generator.generate(noise, &task.grid)?;
    let loss = task.loss(strategy, &paths, chunk)?;
    let pen = penalty_in_chunks(penalty, &paths, loss, task, chunk)?;
    ObjectiveBreakdown::new(loss, pen)
}

fn penalty_in_chunks(penalty: &PenaltySpec, paths: &PathBatch, loss: f64, task: &HedgeTask, chunk: usize) -> Result<f64> {
    if paths.batch() <= chunk {
        return penalty.value(paths, loss, &task.grid);
    }
    let mut sums: Option<Vec<f64>> = None;
    for start in (0..paths.batch()).step_by(chunk) {
        let part = paths.slice(start, chunk.min(paths.batch() - start))?;
        let tape = Tape::new();
        let pv = PathVar::constant(&tape, &part);
        let Some(f) = penalty.features(&pv)? else { return Ok(0.0) };
        let s = f.sum_rows().value().data().to_vec();
        match sums.as_mut() {
            None => sums = Some(s),
            Some(acc) => acc.iter_mut().zip(&s).for_each(|(a, b)| *a += b),
        }
    }
    let n = paths.batch() as f64;
    let means: Vec<f64> = sums.unwrap_or_default().into_iter().map(|v| v / n).collect();
    let tape = Tape::new();
    let v = penalty.from_means(tape.constant(Tensor::row(means)), tape.scalar(loss), paths.batch(), &task.grid)?.item();
    Ok(v)
}

/// Objective breakdown and generator gradients on one noise batch. Batches
/// above `chunk` paths are differentiated in two passes through the per-path
/// P&L and penalty features.
pub fn generator_gradient(
    strategy: &StrategySpec,
    generator: &GeneratorParams,
    noise: &NoiseBatch,
    task: &HedgeTask,
    penalty: &PenaltySpec,
    chunk: usize,
) -> Result<GeneratorGradient> {
    let b = noise.batch();
    let sign = task.risk.orientation();
    if b <= chunk {
        let tape = Tape::new();
        let gen = generator.bind(&tape, true)?;
        let paths = gen.generate(noise, &task.grid)?;
        let (pnl, _) = task.pnl_on_tape(strategy, &tape, &paths, false)?;
        let loss = task.risk.loss_on_tape(pnl)?.scale(sign);
        let pen = penalty.on_tape(&paths, loss, &task.grid)?;
        let breakdown = ObjectiveBreakdown::new(loss.item(), pen.item())?;
        let loss_grad = gen.gradients(&tape.gradient(loss)?);
        let penalty_grad = gen.gradients(&tape.gradient(pen)?);
        return Ok(GeneratorGradient { breakdown, loss_grad, penalty_grad });
    }

    // pass 1: per-path P&L and penalty features
    let mut pnl = Vec::with_capacity(b);
    let mut feats: Vec<f64> = Vec::new();
    let mut k = 0;
    for start in (0..b).step_by(chunk) {
        let part = noise.slice(start, chunk.min(b - start));
        let tape = Tape::new();
        let paths = generator.bind(&tape, false)?.generate(&part, &task.grid)?;
        let (p, _) = task.pnl_on_tape(strategy, &tape, &paths, false)?;
        pnl.extend_from_slice(p.value().data());
        if let Some(f) = penalty.features(&paths)? {
            k = f.shape().1;
            feats.extend_from_slice(f.value().data());
        }
    }
    // cotangents of both terms with respect to the per-path quantities
    let (breakdown, w_loss, w_pen_pnl, w_pen_feat) = {
        let tape = Tape::new();
        let x = tape.param(Tensor::column(pnl));
        let loss = task.risk.loss_on_tape(x)?.scale(sign);
        let f = (k > 0).then(|| Tensor::new(b, k, feats)).transpose()?.map(|t| tape.param(t));
        let pen = match f {
            Some(f) => penalty.from_means(f.mean_rows(), loss, b, &task.grid)?,
            None => tape.scalar(0.0),
        };
        let breakdown = ObjectiveBreakdown::new(loss.item(), pen.item())?;
        let gl = tape.gradient(loss)?;
        let gp = tape.gradient(pen)?;
        (breakdown, gl.wrt(x), gp.wrt(x), f.map(|f| gp.wrt(f)))
    };
    // pass 2: pull the cotangents back to the generator, chunk by chunk
    let mut loss_grad: Option<Vec<Tensor>> = None;
    let mut penalty_grad: Option<Vec<Tensor>> = None;
    let accumulate = |acc: &mut Option<Vec<Tensor>>, g: Vec<Tensor>| match acc.as_mut() {
        None => *acc = Some(g),
        Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| x.add_assign(y)),
    };
    for start in (0..b).step_by(chunk) {
        let len = chunk.min(b - start);
        let part = noise.slice(start, len);
        let tape = Tape::new();
        let gen = generator.bind(&tape, true)?;
        let paths = gen.generate(&part, &task.grid)?;
        let (p, _) = task.pnl_on_tape(strategy, &tape, &paths, false)?;
        let rows = |t: &Tensor, cols: usize| Tensor::new(len, cols, t.data()[start * cols..(start + len) * cols].to_vec());
        let out_loss = p.mul(&tape.constant(rows(&w_loss, 1)?))?.sum();
        let mut out_pen = p.mul(&tape.constant(rows(&w_pen_pnl, 1)?))?.sum();
        if let (Some(w), Some(f)) = (&w_pen_feat, penalty.features(&paths)?) {
            out_pen = out_pen.add(&f.mul(&tape.constant(rows(w, k)?))?.sum())?;
        }
        accumulate(&mut loss_grad, gen.gradients(&tape.gradient(out_loss)?));
        accumulate(&mut penalty_grad, gen.gradients(&tape.gradient(out_pen)?));
    }
    Ok(GeneratorGradient {
        breakdown,
        loss_grad: loss_grad.unwrap_or_default(),
        penalty_grad: penalty_grad.unwrap_or_default(),
    })
}

/// Adversarial training settings. [`GanConfig::effective`] applies `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub epochs: usize,
    pub batch: usize,
    pub generator_lr: f64,
    pub hedger_lr: f64,
    /// Hedger steps per generator step.
    pub update_ratio: usize,
    pub seed: u64,
    /// Multiplies both the epoch count and the batch size.
    pub scale: f64,
    pub chunk: usize,
    /// Skip generator updates; the loop then continues the deep hedge.
    pub freeze_generator: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch: 1 << 16,
            generator_lr: 1e-4,
            hedger_lr: 1e-3,
            update_ratio: 1,
            seed: 0,
            scale: 1.0,
            chunk: 4096,
            freeze_generator: false,
        }
    }
}

/// Smallest batch a scaled configuration may use.
pub const MIN_GAN_BATCH: usize = 256;

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch < 2 || self.update_ratio == 0 || self.chunk == 0 {
            return Err(invalid("GAN config needs positive epochs, update ratio and chunk, and batch >= 2"));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(invalid(format!("scale must lie in (0, 1], got {}", self.scale)));
        }
        for lr in [self.generator_lr, self.hedger_lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(invalid(format!("learning rates must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    /// `(epochs, batch)` after scaling, floored at one epoch and [`MIN_GAN_BATCH`] paths.
    pub fn effective(&self) -> (usize, usize) {
        let epochs = ((self.epochs as f64 * self.scale).ceil() as usize).max(1);
        let batch = ((self.batch as f64 * self.scale).round() as usize).max(MIN_GAN_BATCH.min(self.batch));
        (epochs, batch)
    }
}

/// Noise seed of the generator step in `epoch`.
pub fn generator_noise_seed(seed: u64, epoch: usize) -> u64 {
    derive_seed(seed, &[10, epoch as u64])
}

/// Noise seed of hedger step `j` in `epoch`.
pub fn hedger_noise_seed(seed: u64, epoch: usize, j: usize) -> u64 {
    derive_seed(seed, &[11, epoch as u64, j as u64])
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `loss − penalty` before the generator step.
    pub gen_objective: f64,
    /// Mean pre-step hedger loss over the epoch.
    pub hedger_objective: f64,
    pub penalty: f64,
    pub loss_grad_norm: f64,
    pub penalty_grad_norm: f64,
    /// Norm of the last hedger update of the epoch.
    pub hedger_step_norm: f64,
    pub xi_summary: String,
}

impl EpochRecord {
    /// Share of the penalty in the generator gradient, `‖∇α‖ / (‖∇U‖ + ‖∇α‖)`.
    pub fn penalty_share(&self) -> f64 {
        let total = self.loss_grad_norm + self.penalty_grad_norm;
        if total == 0.0 {
            0.0
        } else {
            self.penalty_grad_norm / total
        }
    }
}

/// Writes `epoch,gen_objective,hedger_objective,penalty,xi_summary`.
pub fn write_history_csv(history: &[EpochRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "gen_objective", "hedger_objective", "penalty", "xi_summary"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.12e}", r.gen_objective),
            format!("{:.12e}", r.hedger_objective),
            format!("{:.12e}", r.penalty),
            r.xi_summary.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Result of adversarial training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanRun {
    pub strategy: StrategySpec,
    pub generator: GeneratorParams,
    pub reference: GeneratorParams,
    pub penalty: PenaltySpec,
    pub task: HedgeTask,
    pub config: GanConfig,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize)]
struct GanRunMeta<'a> {
    generator: &'a GeneratorParams,
    reference: &'a GeneratorParams,
    penalty: &'a PenaltySpec,
    task: &'a HedgeTask,
    config: &'a GanConfig,
    features: &'a [crate::hedgekit::Feature],
    traded: &'a [usize],
}

impl GanRun {
    /// Writes `hedger.ckpt`, `gan_run.json` and `history.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_checkpoint(&dir.join("hedger.ckpt"), &self.strategy.net, self.config.seed, self.history.len() as u64)?;
        let meta = GanRunMeta {
            generator: &self.generator,
            reference: &self.reference,
            penalty: &self.penalty,
            task: &self.task,
            config: &self.config,
            features: &self.strategy.features,
            traded: &self.strategy.traded,
        };
        fs::write(dir.join("gan_run.json"), serde_json::to_string_pretty(&meta)?)?;
        write_history_csv(&self.history, fs::File::create(dir.join("history.csv"))?)
    }
}

fn flat(s: &StrategySpec) -> Vec<f64> {
    s.net.to_flat()
}

fn step_norm(before: &[f64], after: &[f64]) -> f64 {
    before.iter().zip(after).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn diverged(epoch: usize, detail: String, history: &[EpochRecord]) -> Error {
    let mut dump = Vec::new();
    let tail = &history[history.len().saturating_sub(5)..];
    if write_history_csv(tail, &mut dump).is_ok() {
        Error::Diverged { step: epoch, detail: format!("{detail}\n{}", String::from_utf8_lossy(&dump)) }
    } else {
        Error::Diverged { step: epoch, detail }
    }
}

/// Runs the adversarial loop from a pretrained hedge and a generator placed
/// at `reference`.
pub fn train_robust_gan(
    pretrained: &HedgeRun,
    reference: &GeneratorParams,
    penalty: &PenaltySpec,
    cfg: &GanConfig,
) -> Result<GanRun> {
    cfg.validate()?;
    penalty.validate()?;
    reference.validate()?;
    let task = &pretrained.task;
    pretrained.strategy.validate(&reference.roles())?;
    let (epochs, batch) = cfg.effective();
    let grid = &task.grid;
    let d = reference.noise_dim();

    let mut strategy = pretrained.strategy.clone();
    let mut generator = reference.clone();
    let mut h_opt = OptState::new(strategy.net.tensors(), cfg.hedger_lr);
    let mut g_opt = OptState::new(generator.trainable_tensors().iter(), cfg.generator_lr);
    let mut history: Vec<EpochRecord> = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let noise = sample_noise(generator_noise_seed(cfg.seed, epoch), batch, grid, d)?;
        let gg = generator_gradient(&strategy, &generator, &noise, task, penalty, cfg.chunk)
            .map_err(|e| diverged(epoch, format!("generator step: {e}"), &history))?;
        if !cfg.freeze_generator {
            let ascent: Vec<Tensor> = gg.objective_grad().iter().map(|g| g.map(|v| -v)).collect();
            if ascent.iter().any(|g| !g.is_finite()) {
                return Err(diverged(epoch, "generator gradient is not finite".into(), &history));
            }
            let mut tensors = generator.trainable_tensors();
            {
                let mut refs: Vec<&mut Tensor> = tensors.iter_mut().collect();
                g_opt.step(&mut refs, &ascent)?;
            }
            generator.set_trainable(&tensors)?;
            generator.project();
        }

        let mut losses = 0.0;
        let mut last_norm = 0.0;
        for j in 0..cfg.update_ratio {
            let noise = sample_noise(hedger_noise_seed(cfg.seed, epoch, j), batch, grid, d)?;
            let paths = generator.generate(&noise, grid)?;
            let before = flat(&strategy);
            losses += hedger_step(&mut strategy, &mut h_opt, task, &paths, cfg.chunk)
                .map_err(|e| diverged(epoch, format!("hedger step: {e}"), &history))?;
            last_norm = step_norm(&before, &flat(&strategy));
        }
        history.push(EpochRecord {
            epoch,
            gen_objective: gg.breakdown.objective,
            hedger_objective: losses / cfg.update_ratio as f64,
            penalty: gg.breakdown.penalty,
            loss_grad_norm: gg.loss_norm(),
            penalty_grad_norm: gg.penalty_norm(),
            hedger_step_norm: last_norm,
            xi_summary: generator.to_string(),
        });
    }
    Ok(GanRun {
        strategy,
        generator,
        reference: reference.clone(),
        penalty: penalty.clone(),
        task: task.clone(),
        config: cfg.clone(),
        history,
    })
}

/// Continues a pretrained deep hedge on `generator` with the hedger noise
/// stream and step count the adversarial loop would use under `cfg`.
pub fn continue_deep_hedge(pretrained: &HedgeRun, generator: &GeneratorParams, cfg: &GanConfig) -> Result<StrategySpec> {
    cfg.validate()?;
    let (epochs, batch) = cfg.effective();
    let task = &pretrained.task;
    let mut strategy = pretrained.strategy.clone();
    let mut opt = OptState::new(strategy.net.tensors(), cfg.hedger_lr);
    for epoch in 0..epochs {
        for j in 0..cfg.update_ratio {
            let noise = sample_noise(hedger_noise_seed(cfg.seed, epoch, j), batch, &task.grid, generator.noise_dim())?;
            let paths = generator.generate(&noise, &task.grid)?;
            hedger_step(&mut strategy, &mut opt, task, &paths, cfg.chunk)?;
        }
    }
    Ok(strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hedgekit::{train_deep_hedge, TrainSchedule};
    use crate::sigkit::DEFAULT_CHAIN;

    fn pretrained() -> HedgeRun {
        let sched = TrainSchedule { pool: 64, batches: vec![32], passes: 1, lr: 1e-3, eval_paths: 64, chunk: 4096 };
        train_deep_hedge(&GeneratorParams::bs(0.2, 1.0), &HedgeTask::bs_study(), &sched, &[8], 1).unwrap()
    }

    fn small_cfg() -> GanConfig {
        GanConfig { epochs: 3, batch: 40, ..GanConfig::default() }
    }

    #[test]
    fn frozen_generator_reproduces_deep_hedge_bit_exactly() {
        let run = pretrained();
        let g = GeneratorParams::bs(0.2, 1.0);
        let cfg = GanConfig { freeze_generator: true, update_ratio: 2, ..small_cfg() };
        let gan = train_robust_gan(&run, &g, &PenaltySpec::vol_mse(0.01, 0.2), &cfg).unwrap();
        let deep = continue_deep_hedge(&run, &g, &cfg).unwrap();
        assert_eq!(gan.strategy, deep);
        assert_eq!(gan.generator, g);
    }

    #[test]
    fn zero_penalty_objective_is_the_hedge_loss() {
        let run = pretrained();
        let g = GeneratorParams::bs(0.2, 1.0);
        let noise = sample_noise(3, 50, &run.task.grid, 1).unwrap();
        let b = robust_objective(&run.strategy, &g, &noise, &run.task, &PenaltySpec::None, 4096).unwrap();
        let loss = run.task.loss(&run.strategy, &g.generate(&noise, &run.task.grid).unwrap(), 4096).unwrap();
        assert_eq!(b.penalty, 0.0);
        assert_eq!(b.objective, loss);
    }

    #[test]
    fn chunked_generator_gradient_matches_single_pass() {
        let run = pretrained();
        let task = run.task.clone();
        let g = GeneratorParams::heston(1.0, 0.04, 0.3, -0.5, 1.0);
        let strategy = StrategySpec::default_for(&g, &[6], 2).unwrap();
        let noise = sample_noise(5, 30, &task.grid, 2).unwrap();
        let reference = g.generate(&sample_noise(6, 30, &task.grid, 2).unwrap(), &task.grid).unwrap();
        let penalties = [
            PenaltySpec::hms_vol(0.5, 0.2),
            PenaltySpec::sig_mmd(0.1, 2, DEFAULT_CHAIN.to_vec(), vec![0, 1], &reference).unwrap(),
        ];
        for p in penalties {
            let a = generator_gradient(&strategy, &g, &noise, &task, &p, 100).unwrap();
            let b = generator_gradient(&strategy, &g, &noise, &task, &p, 7).unwrap();
            assert!((a.breakdown.objective - b.breakdown.objective).abs() < 1e-12);
            for (x, y) in a.objective_grad().iter().zip(&b.objective_grad()) {
                for (u, v) in x.data().iter().zip(y.data()) {
                    assert!((u - v).abs() < 1e-9 * (1.0 + u.abs()), "{p:?}: {u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn scaling_floors() {
        let cfg = GanConfig { scale: 0.001, ..GanConfig::default() };
        assert_eq!(cfg.effective(), (1, MIN_GAN_BATCH));
        let cfg = GanConfig { scale: 0.05, ..GanConfig::default() };
        assert_eq!(cfg.effective(), (50, 3277));
    }

    #[test]
    fn history_csv_has_declared_header() {
        let run = pretrained();
        let gan = train_robust_gan(&run, &GeneratorParams::bs(0.2, 1.0), &PenaltySpec::vol_mse(1.0, 0.2), &small_cfg()).unwrap();
        let mut buf = Vec::new();
        write_history_csv(&gan.history, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,gen_objective,hedger_objective,penalty,xi_summary\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
