//! Study stages. Every stage writes its artifacts under the output directory
//! and, when the directory holds a manifest for the same config, reuses
//! what an earlier command already produced.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use robhedge::evalkit::{
    build_bs_scenarios, build_heston_scenarios_from_file, compare_to_hms, hms_pde_solve, oosp, spatial_convergence_order,
    train_test_hedge, HmsComparison, OospReport, PdeSpec, ScenarioSet,
};
use robhedge::genkit::{
    calibrate, derive_seed, write_params_csv, Calibration, CalibrationMethod, CalibrationTarget, GeneratorParams,
    NsdeParams,
};
use robhedge::hedgekit::{
    bs_call_delta, eval_seed, train_on_measure, Feature, HedgeRun, HedgeTask, Payoff, StrategySpec, TrainingMeasure, HEDGER_CHECKPOINT,
};
use robhedge::nnkit::load_checkpoint;
use robhedge::robust::{continue_deep_hedge, train_robust_gan, GanRun, PenaltySpec};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, PenaltyKind, ScenarioKind, Study};
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const FAILURE_REPORT: &str = "failure.json";
/// Deep hedge after the extra training that matches a robust run.
pub const CONTINUED_DIR: &str = "deep_hedge_continued";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub study: Study,
    pub commands: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub scale: f64,
    pub version: String,
    /// Artifact paths relative to the output directory.
    pub files: BTreeSet<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureReport {
    pub command: String,
    pub stage: String,
    pub error: String,
    pub config_hash: String,
}

/// A generator the hedge is trained on, with its initial strategy.
#[derive(Debug, Clone)]
pub struct HedgeSetup {
    pub label: String,
    pub generator: GeneratorParams,
    pub init: StrategySpec,
}

/// A trained strategy and how it was obtained.
#[derive(Debug, Clone)]
pub struct StrategyEntry {
    /// File stem of its artifacts.
    pub id: String,
    pub kind: &'static str,
    pub generator: String,
    pub inv_gamma: Option<f64>,
    pub strategy: StrategySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub generator: String,
    pub inv_gamma: Option<f64>,
    pub mean: f64,
    pub std: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmsSummary {
    pub inv_gamma: f64,
    pub correlation: Option<f64>,
    pub convergence_order: f64,
    pub terminal_max_abs: f64,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub task: HedgeTask,
    command: String,
    stage: String,
    reuse: bool,
    manifest: Manifest,
}

fn ig_tag(ig: f64) -> String {
    format!("{ig}")
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: PathBuf, command: &str) -> CliResult<Self> {
        fs::create_dir_all(&out)?;
        let hash = cfg.hash();
        let previous: Option<Manifest> = fs::read_to_string(out.join(MANIFEST)).ok().and_then(|t| serde_json::from_str(&t).ok());
        let reuse = previous.as_ref().is_some_and(|m| m.config_hash == hash);
        let manifest = match previous {
            Some(m) if reuse => m,
            _ => Manifest {
                study: cfg.study,
                commands: Vec::new(),
                config_hash: hash,
                seed: cfg.seed,
                scale: cfg.scale,
                version: env!("CARGO_PKG_VERSION").to_string(),
                files: BTreeSet::new(),
            },
        };
        let task = cfg.market.task()?;
        let _ = fs::remove_file(out.join(FAILURE_REPORT));
        Ok(Self { cfg, out, task, command: command.to_string(), stage: "setup".into(), reuse, manifest })
    }

    fn enter(&mut self, stage: impl Into<String>) {
        self.stage = stage.into();
        eprintln!("[{}] {}", self.command, self.stage);
    }

    fn record(&mut self, path: &Path) {
        if let Ok(rel) = path.strip_prefix(&self.out) {
            self.manifest.files.insert(rel.to_string_lossy().replace('\\', "/"));
        }
    }

    fn cached(&self, path: &Path) -> bool {
        self.reuse && path.exists()
    }

    fn write_manifest(&mut self) -> CliResult<()> {
        self.manifest.commands.push(self.command.clone());
        let path = self.out.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }

    /// Writes the manifest after a successful command.
    pub fn finish(mut self) -> CliResult<Manifest> {
        self.write_manifest()?;
        Ok(self.manifest)
    }

    /// Writes the failure report and the manifest of whatever was produced.
    pub fn fail(mut self, err: &CliError) -> CliResult<()> {
        let report = FailureReport {
            command: self.command.clone(),
            stage: self.stage.clone(),
            error: err.to_string(),
            config_hash: self.manifest.config_hash.clone(),
        };
        fs::write(self.out.join(FAILURE_REPORT), serde_json::to_string_pretty(&report)? + "\n")?;
        self.write_manifest()
    }

    fn seed(&self, tags: &[u64]) -> u64 {
        derive_seed(self.cfg.seed, tags)
    }

    fn reference_label(&self) -> &'static str {
        self.cfg.market.generator.variant()
    }

    /// Fits the NSDE of the comparison study; other studies record the
    /// closed-form calibration of the estimated model to its own paths.
    pub fn calibrate(&mut self) -> CliResult<Calibration> {
        self.enter("calibrate");
        let dir = self.out.join("calibration");
        let path = dir.join("calibration.json");
        if self.cached(&path) {
            return Ok(serde_json::from_str(&fs::read_to_string(&path)?)?);
        }
        let reference = self.cfg.market.generator.clone();
        let grid = self.task.grid.clone();
        let cal = match (&self.cfg.calibration, self.cfg.study) {
            (Some(c), Study::NsdeCompare) => {
                let target = reference.sample(self.seed(&[700]), c.target_paths, &grid)?.select_channels(&[0, 1])?;
                let s0 = vec![target.get(0, 0, 0), target.get(0, 0, 1)];
                let init = GeneratorParams::Nsde(NsdeParams::init(s0, &c.hidden, c.output_scale, self.seed(&[701]))?);
                let fit = robhedge::genkit::SigFitConfig { seed: self.seed(&[702]), ..c.fit.clone() };
                calibrate(&init, CalibrationTarget::Paths(&target), &CalibrationMethod::SigMmdGradient(fit), &grid)?
            }
            _ => match &reference {
                GeneratorParams::Bs(_) => {
                    let target = reference.sample(self.seed(&[700]), 4096, &grid)?;
                    calibrate(&reference, CalibrationTarget::Paths(&target), &CalibrationMethod::RealizedVol, &grid)?
                }
                _ => calibrate(&reference, CalibrationTarget::RealizedVol(0.0), &CalibrationMethod::Fixed, &grid)?,
            },
        };
        fs::create_dir_all(&dir)?;
        fs::write(&path, serde_json::to_string_pretty(&cal)?)?;
        self.record(&path);
        if !cal.converged && cal.iterations > 0 {
            eprintln!("warning: calibration stopped after {} iterations without reaching a plateau", cal.iterations);
        }
        Ok(cal)
    }

    /// Generators the hedges are trained on.
    pub fn setups(&mut self) -> CliResult<Vec<HedgeSetup>> {
        let reference = self.cfg.market.generator.clone();
        let hidden = self.cfg.hedger.hidden.clone();
        let mut out = Vec::new();
        match self.cfg.study {
            Study::NsdeCompare => {
                // trading and information restricted to the asset
                let init = StrategySpec::new(vec![Feature::Time, Feature::Channel(0)], vec![0], &hidden, self.seed(&[100, 0]))?
                    .centered_at(&reference.initial_state())?;
                out.push(HedgeSetup { label: reference.variant().into(), generator: reference, init });
                let nsde = self.calibrate()?.params;
                let init = StrategySpec::default_for(&nsde, &hidden, self.seed(&[100, 1]))?;
                out.push(HedgeSetup { label: "nsde".into(), generator: nsde, init });
            }
            _ => {
                let init = StrategySpec::default_for(&reference, &hidden, self.seed(&[100, 0]))?;
                out.push(HedgeSetup { label: reference.variant().into(), generator: reference, init });
            }
        }
        Ok(out)
    }

    /// Deep hedge for every setup.
    pub fn train_hedges(&mut self) -> CliResult<Vec<(HedgeSetup, HedgeRun)>> {
        let setups = self.setups()?;
        let schedule = self.cfg.schedule()?;
        let mut runs = Vec::new();
        for (i, s) in setups.into_iter().enumerate() {
            self.enter(format!("train-hedge {}", s.label));
            let dir = self.out.join(&s.label).join("deep_hedge");
            let run = if self.cached(&dir.join(HEDGER_CHECKPOINT)) {
                HedgeRun::load(&dir)?
            } else {
                let run = train_on_measure(
                    s.init.clone(),
                    TrainingMeasure::Single(s.generator.clone()),
                    &self.task,
                    &schedule,
                    self.seed(&[101, i as u64]),
                )?;
                run.save(&dir)?;
                self.record(&dir.join(HEDGER_CHECKPOINT));
                self.record(&dir.join(robhedge::hedgekit::HEDGE_RUN_META));
                run
            };
            eprintln!("  {} deep hedge objective {:.6}", s.label, run.final_objective);
            runs.push((s, run));
        }
        Ok(runs)
    }

    /// Deep hedges trained further on their own generator for as many
    /// iterations as a robust run, with the robust run's hedger noise. These
    /// are the deep hedges the robust strategies are compared against.
    pub fn continue_hedges(&mut self, hedges: &[(HedgeSetup, HedgeRun)]) -> CliResult<Vec<StrategyEntry>> {
        let mut entries = Vec::new();
        for (i, (setup, pretrained)) in hedges.iter().enumerate() {
            let strategy = if self.cfg.penalty.inv_gamma.is_empty() {
                pretrained.strategy.clone()
            } else {
                self.enter(format!("continue-hedge {}", setup.label));
                let dir = self.out.join(&setup.label).join(CONTINUED_DIR);
                if self.cached(&dir.join(HEDGER_CHECKPOINT)) {
                    HedgeRun::load(&dir)?.strategy
                } else {
                    let cfg = self.cfg.gan_config(self.seed(&[200, i as u64]));
                    let strategy = continue_deep_hedge(pretrained, &setup.generator, &cfg)?;
                    let (epochs, _) = cfg.effective();
                    let schedule = &pretrained.schedule;
                    let eval = setup.generator.sample(eval_seed(pretrained.seed), schedule.eval_paths, &self.task.grid)?;
                    let run = HedgeRun {
                        final_objective: self.task.loss(&strategy, &eval, schedule.chunk)?,
                        steps: pretrained.steps + epochs * cfg.update_ratio,
                        strategy,
                        ..pretrained.clone()
                    };
                    run.save(&dir)?;
                    self.record(&dir.join(HEDGER_CHECKPOINT));
                    self.record(&dir.join(robhedge::hedgekit::HEDGE_RUN_META));
                    eprintln!("  {} continued deep hedge objective {:.6}", setup.label, run.final_objective);
                    run.strategy
                }
            };
            entries.push(StrategyEntry {
                id: format!("{}_deep_hedge", setup.label),
                kind: "deep-hedge",
                generator: setup.label.clone(),
                inv_gamma: None,
                strategy,
            });
        }
        Ok(entries)
    }

    /// The penalty for one grid point, centred on `generator`.
    pub fn penalty(&self, inv_gamma: f64, generator: &GeneratorParams, index: usize) -> CliResult<PenaltySpec> {
        let gamma = 1.0 / inv_gamma;
        let p = &self.cfg.penalty;
        let sigma = || {
            self.cfg.sigma_ref().ok_or_else(|| CliError::Config {
                field: "penalty.sigma_ref".into(),
                message: "required for volatility penalties".into(),
            })
        };
        Ok(match p.kind {
            PenaltyKind::None => PenaltySpec::None,
            PenaltyKind::VolMse => PenaltySpec::vol_mse(gamma, sigma()?),
            PenaltyKind::HmsVol => PenaltySpec::hms_vol(gamma, sigma()?),
            PenaltyKind::SigMmd => {
                let paths = generator.sample(self.seed(&[600, index as u64]), p.reference_paths, &self.task.grid)?;
                PenaltySpec::sig_mmd(gamma, p.depth, p.chain.clone(), p.channels.clone(), &paths)?
            }
        })
    }

    /// One adversarial run per setup and grid point. Failed grid points are
    /// reported and skipped.
    pub fn train_robust(&mut self, hedges: &[(HedgeSetup, HedgeRun)]) -> CliResult<Vec<StrategyEntry>> {
        let mut entries = Vec::new();
        let grid = self.cfg.penalty.inv_gamma.clone();
        for (i, (setup, pretrained)) in hedges.iter().enumerate() {
            for &ig in &grid {
                self.enter(format!("train-robust {} 1/gamma={}", setup.label, ig_tag(ig)));
                let dir = self.out.join(&setup.label).join(format!("robust_{}", ig_tag(ig)));
                let strategy = if self.cached(&dir.join(HEDGER_CHECKPOINT)) {
                    load_strategy(&dir)?
                } else {
                    let penalty = self.penalty(ig, &setup.generator, i)?;
                    let cfg = self.cfg.gan_config(self.seed(&[200, i as u64]));
                    match train_robust_gan(pretrained, &setup.generator, &penalty, &cfg) {
                        Ok(run) => {
                            self.save_gan(&run, &dir)?;
                            run.strategy
                        }
                        Err(e) => {
                            eprintln!("  skipped: {e}");
                            let path = dir.join(FAILURE_REPORT);
                            fs::create_dir_all(&dir)?;
                            fs::write(&path, serde_json::to_string_pretty(&serde_json::json!({ "error": e.to_string() }))?)?;
                            self.record(&path);
                            continue;
                        }
                    }
                };
                entries.push(StrategyEntry {
                    id: format!("{}_robust_{}", setup.label, ig_tag(ig)),
                    kind: "robust-gan",
                    generator: setup.label.clone(),
                    inv_gamma: Some(ig),
                    strategy,
                });
            }
        }
        Ok(entries)
    }

    fn save_gan(&mut self, run: &GanRun, dir: &Path) -> CliResult<()> {
        run.save(dir)?;
        for f in [HEDGER_CHECKPOINT, "gan_run.json", "history.csv"] {
            self.record(&dir.join(f));
        }
        Ok(())
    }

    pub fn scenarios(&mut self) -> CliResult<Option<ScenarioSet>> {
        let Some(sc) = self.cfg.scenarios.clone() else { return Ok(None) };
        self.enter("scenarios");
        let reference = &self.cfg.market.generator;
        let set = match sc.kind {
            ScenarioKind::BsInverse => {
                let GeneratorParams::Bs(b) = reference else {
                    return Err(CliError::Config {
                        field: "scenarios.kind".into(),
                        message: "bs-inverse needs a Black-Scholes generator".into(),
                    });
                };
                build_bs_scenarios(b.sigma, b.s0, sc.n_obs, sc.m, self.seed(&[400]))?
            }
            ScenarioKind::HestonFile => {
                let path = sc.path.as_ref().expect("validated");
                build_heston_scenarios_from_file(reference, fs::File::open(path)?, sc.lags)?
            }
            ScenarioKind::File => ScenarioSet::from_file(fs::File::open(sc.path.as_ref().expect("validated"))?)?,
        };
        if set.dropped > 0 {
            eprintln!("  dropped {} scenarios outside the parameter set", set.dropped);
        }
        let path = self.out.join("scenarios.csv");
        write_params_csv(&set.params, fs::File::create(&path)?)?;
        self.record(&path);
        Ok(Some(set))
    }

    /// Hedge trained on the pooled scenarios.
    pub fn test_hedge(&mut self, scenarios: &ScenarioSet) -> CliResult<StrategyEntry> {
        self.enter("test-hedge");
        let dir = self.out.join("test_hedge");
        let strategy = if self.cached(&dir.join(HEDGER_CHECKPOINT)) {
            HedgeRun::load(&dir)?.strategy
        } else {
            let init = StrategySpec::default_for(&self.cfg.market.generator, &self.cfg.hedger.hidden, self.seed(&[300]))?;
            let run = train_test_hedge(init, scenarios, &self.task, &self.cfg.schedule()?, self.seed(&[301]))?;
            run.save(&dir)?;
            self.record(&dir.join(HEDGER_CHECKPOINT));
            self.record(&dir.join(robhedge::hedgekit::HEDGE_RUN_META));
            run.strategy
        };
        Ok(StrategyEntry {
            id: "test_hedge".into(),
            kind: "test-hedge",
            generator: self.reference_label().into(),
            inv_gamma: None,
            strategy,
        })
    }

    /// Backward test of every strategy on the same scenarios and evaluation noise.
    pub fn oosp(&mut self, entries: &[StrategyEntry], scenarios: &ScenarioSet) -> CliResult<Vec<SummaryRow>> {
        let sc = self.cfg.scenarios.clone().expect("scenarios configured");
        let dir = self.out.join("oosp");
        let mut rows = Vec::new();
        for e in entries {
            self.enter(format!("oosp {}", e.id));
            let report: OospReport = oosp(
                &e.id,
                &e.strategy,
                scenarios,
                Some(&self.cfg.market.generator),
                &self.task,
                sc.eval_paths,
                self.cfg.hedger.schedule.chunk,
                self.seed(&[500]),
            )?;
            for (m, why) in &report.skipped {
                eprintln!("  scenario {m} skipped: {why}");
            }
            report.save(&dir, &e.id)?;
            self.record(&dir.join(format!("{}.csv", e.id)));
            self.record(&dir.join(format!("{}.json", e.id)));
            rows.push(SummaryRow {
                strategy: e.kind.into(),
                generator: e.generator.clone(),
                inv_gamma: e.inv_gamma,
                mean: report.mean,
                std: report.std,
                m: report.losses.len(),
                skipped: report.skipped.len(),
            });
        }
        let path = self.out.join("summary.csv");
        let mut w = csv::Writer::from_path(&path).map_err(robhedge::Error::from)?;
        for r in &rows {
            w.serialize(r).map_err(robhedge::Error::from)?;
        }
        w.flush()?;
        self.record(&path);
        Ok(rows)
    }

    /// PDE benchmark of each robust strategy against the deep hedge.
    pub fn hms_benchmark(&mut self, deep: &StrategySpec, robust: &[StrategyEntry]) -> CliResult<Vec<HmsSummary>> {
        self.enter("hms-benchmark");
        let GeneratorParams::Bs(b) = self.cfg.market.generator.clone() else {
            return Err(CliError::Config { field: "market.generator".into(), message: "the PDE benchmark needs Black-Scholes".into() });
        };
        let Payoff::Call { strike } = self.task.payoff else {
            return Err(CliError::Config { field: "market.payoff".into(), message: "the PDE benchmark needs a call".into() });
        };
        let bench = self.cfg.benchmark.clone().unwrap_or_default();
        let sigma = self.cfg.sigma_ref().unwrap_or(b.sigma);
        let maturity = self.task.grid.maturity();
        let spec = PdeSpec {
            s0: b.s0,
            intervals: bench.intervals,
            time_steps: bench.time_steps,
            ..PdeSpec::call(sigma, strike, maturity)
        };
        let pde = hms_pde_solve(&spec)?;
        let order = spatial_convergence_order(&spec, maturity / 2.0, bench.s_lo * b.s0, bench.s_hi * b.s0)?;
        let terminal = pde.w[pde.w.len() - 1].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dir = self.out.join("hms");
        fs::create_dir_all(&dir)?;
        let mut out = Vec::new();
        for e in robust {
            let ig = e.inv_gamma.expect("robust entries carry 1/gamma");
            let cmp: HmsComparison = compare_to_hms(
                &e.strategy,
                deep,
                &pde,
                maturity / 2.0,
                1.0 / ig,
                bench.s_lo * b.s0,
                bench.s_hi * b.s0,
                bench.points,
            )?;
            let path = dir.join(format!("comparison_{}.csv", ig_tag(ig)));
            cmp.write_csv(fs::File::create(&path)?)?;
            self.record(&path);
            out.push(HmsSummary { inv_gamma: ig, correlation: cmp.correlation, convergence_order: order, terminal_max_abs: terminal });
        }
        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_string_pretty(&out)? + "\n")?;
        self.record(&path);
        Ok(out)
    }

    /// Plot data: positions at `T/2` over a level grid around `s0`.
    pub fn emit_plots(&mut self, entries: &[StrategyEntry]) -> CliResult<PathBuf> {
        self.enter("emit-plots");
        let reference = self.cfg.market.generator.clone();
        let state = reference.initial_state();
        let s0 = state[0];
        let dir = self.out.join("plots");
        fs::create_dir_all(&dir)?;
        let path = dir.join("positions.csv");
        let mut w = csv::Writer::from_path(&path).map_err(robhedge::Error::from)?;
        let mut header = vec!["s".to_string()];
        let bs = match &reference {
            GeneratorParams::Bs(b) => Some(b.sigma),
            _ => None,
        };
        if bs.is_some() {
            header.push("bs_delta".into());
        }
        header.extend(entries.iter().map(|e| e.id.clone()));
        w.write_record(&header).map_err(robhedge::Error::from)?;
        let maturity = self.task.grid.maturity();
        let strike = match self.task.payoff {
            Payoff::Call { strike } | Payoff::Forward { strike } => strike,
            Payoff::Zero => s0,
        };
        for i in 0..=40 {
            let s = s0 * (0.8 + 0.01 * i as f64);
            let mut row = vec![format!("{s}")];
            if let Some(sigma) = bs {
                row.push(format!("{}", bs_call_delta(s, strike, sigma, maturity / 2.0)));
            }
            let mut st = state.clone();
            st[0] = s;
            for e in entries {
                row.push(format!("{}", e.strategy.position_at(0.5, &st)?[0]));
            }
            w.write_record(&row).map_err(robhedge::Error::from)?;
        }
        w.flush()?;
        self.record(&path);
        Ok(path)
    }

    /// Strategies already trained in this output directory.
    pub fn load_strategies(&mut self) -> CliResult<Vec<StrategyEntry>> {
        let mut entries = Vec::new();
        let setups = self.setups()?;
        for s in &setups {
            let dir = self.out.join(&s.label).join("deep_hedge");
            if !dir.join(HEDGER_CHECKPOINT).exists() {
                return Err(CliError::MissingArtifact { path: dir, hint: "run `train-hedge` first".into() });
            }
            entries.push(StrategyEntry {
                id: format!("{}_deep_hedge", s.label),
                kind: "deep-hedge",
                generator: s.label.clone(),
                inv_gamma: None,
                strategy: match self.out.join(&s.label).join(CONTINUED_DIR) {
                    c if c.join(HEDGER_CHECKPOINT).exists() => HedgeRun::load(&c)?.strategy,
                    _ => HedgeRun::load(&dir)?.strategy,
                },
            });
            for &ig in &self.cfg.penalty.inv_gamma {
                let dir = self.out.join(&s.label).join(format!("robust_{}", ig_tag(ig)));
                if dir.join(HEDGER_CHECKPOINT).exists() {
                    entries.push(StrategyEntry {
                        id: format!("{}_robust_{}", s.label, ig_tag(ig)),
                        kind: "robust-gan",
                        generator: s.label.clone(),
                        inv_gamma: Some(ig),
                        strategy: load_strategy(&dir)?,
                    });
                }
            }
        }
        let dir = self.out.join("test_hedge");
        if dir.join(HEDGER_CHECKPOINT).exists() {
            entries.push(StrategyEntry {
                id: "test_hedge".into(),
                kind: "test-hedge",
                generator: self.reference_label().into(),
                inv_gamma: None,
                strategy: HedgeRun::load(&dir)?.strategy,
            });
        }
        Ok(entries)
    }

    /// Deep hedges, robust runs, test hedge and OOSP: the whole study.
    pub fn run_study(&mut self) -> CliResult<Vec<StrategyEntry>> {
        let hedges = self.train_hedges()?;
        let mut entries = self.continue_hedges(&hedges)?;
        let robust = self.train_robust(&hedges)?;
        if self.cfg.study == Study::BsHms {
            self.hms_benchmark(&entries[0].strategy, &robust)?;
        }
        entries.extend(robust);
        if let Some(set) = self.scenarios()? {
            if self.cfg.scenarios.as_ref().is_some_and(|s| s.test_hedge) {
                entries.push(self.test_hedge(&set)?);
            }
            self.oosp(&entries, &set)?;
        }
        Ok(entries)
    }
}

/// Strategy from a run directory holding `hedger.ckpt` and either
/// `hedge_run.json` or `gan_run.json`.
pub fn load_strategy(dir: &Path) -> CliResult<StrategySpec> {
    #[derive(Deserialize)]
    struct Layout {
        features: Vec<Feature>,
        traded: Vec<usize>,
    }
    let (net, _) = load_checkpoint(&dir.join(HEDGER_CHECKPOINT))?;
    let meta = ["gan_run.json", robhedge::hedgekit::HEDGE_RUN_META]
        .iter()
        .map(|f| dir.join(f))
        .find(|p| p.exists())
        .ok_or_else(|| CliError::MissingArtifact { path: dir.to_path_buf(), hint: "no run metadata next to the checkpoint".into() })?;
    let layout: Layout = serde_json::from_str(&fs::read_to_string(meta)?)?;
    Ok(StrategySpec { net, features: layout.features, traded: layout.traded })
}
