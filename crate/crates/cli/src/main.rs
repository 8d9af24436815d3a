use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robhedge_cli::{CliError, CliResult, ExperimentConfig, Pipeline, Study};

#[derive(Parser)]
#[command(name = "robhedge", version, about = "Robust hedging studies: deep hedges, adversarial training, out-of-sample tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true, env = "ROBHEDGE_CONFIG")]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true, env = "ROBHEDGE_SEED")]
    seed: Option<u64>,

    /// Overrides the config scale factor, in (0, 1].
    #[arg(long, global = true, env = "ROBHEDGE_SCALE")]
    scale: Option<f64>,

    /// Artifact directory; defaults to `runs/<study>`.
    #[arg(long, global = true, env = "ROBHEDGE_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Calibrate the study's generator (fits the NSDE for nsde-compare).
    Calibrate,
    /// Train the deep hedges.
    TrainHedge,
    /// Train one robust hedge per penalty multiplier.
    TrainRobust,
    /// Backward out-of-sample test of every trained strategy.
    Oosp,
    /// Robust runs over the penalty grid followed by the out-of-sample table.
    SweepGamma,
    /// Compare robust strategies with the PDE correction (bs-hms).
    HmsBenchmark,
    /// Write plot data for trained strategies.
    EmitPlots,
    /// Run the whole study.
    Run,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::TrainHedge => "train-hedge",
            Command::TrainRobust => "train-robust",
            Command::Oosp => "oosp",
            Command::SweepGamma => "sweep-gamma",
            Command::HmsBenchmark => "hms-benchmark",
            Command::EmitPlots => "emit-plots",
            Command::Run => "run",
        }
    }
}

fn load(cli: &Cli) -> CliResult<(ExperimentConfig, PathBuf)> {
    let path = cli.config.clone().ok_or_else(|| CliError::Config {
        field: "--config".into(),
        message: "no config file given (flag or ROBHEDGE_CONFIG)".into(),
    })?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(scale) = cli.scale {
        cfg.scale = scale;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(cfg.study.name()));
    Ok((cfg, out))
}

fn execute(p: &mut Pipeline, cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Calibrate => {
            let cal = p.calibrate()?;
            println!("calibrated {} (objective {:e}, converged {})", cal.params, cal.objective, cal.converged);
        }
        Command::TrainHedge => {
            for (s, run) in p.train_hedges()? {
                println!("{} deep hedge: {} steps, objective {:.6}", s.label, run.steps, run.final_objective);
            }
        }
        Command::TrainRobust => {
            let hedges = p.train_hedges()?;
            p.continue_hedges(&hedges)?;
            let robust = p.train_robust(&hedges)?;
            println!("{} robust runs written", robust.len());
        }
        Command::Oosp => {
            let entries = p.load_strategies()?;
            let set = p.scenarios()?.ok_or_else(|| CliError::Config {
                field: "scenarios".into(),
                message: "oosp needs a [scenarios] section".into(),
            })?;
            print_summary(&p.oosp(&entries, &set)?);
        }
        Command::SweepGamma => {
            if p.cfg.penalty.inv_gamma.len() < 2 {
                return Err(CliError::Config { field: "penalty.inv_gamma".into(), message: "a sweep needs at least two values".into() });
            }
            if p.cfg.scenarios.is_none() {
                return Err(CliError::Config { field: "scenarios".into(), message: "sweep-gamma needs a [scenarios] section".into() });
            }
            p.run_study()?;
        }
        Command::HmsBenchmark => {
            let hedges = p.train_hedges()?;
            let deep = p.continue_hedges(&hedges)?;
            let robust = p.train_robust(&hedges)?;
            for row in p.hms_benchmark(&deep[0].strategy, &robust)? {
                println!(
                    "1/gamma={} correlation={} order={:.3}",
                    row.inv_gamma,
                    row.correlation.map_or("n/a".into(), |c| format!("{c:.4}")),
                    row.convergence_order
                );
            }
        }
        Command::EmitPlots => {
            let entries = p.load_strategies()?;
            println!("wrote {}", p.emit_plots(&entries)?.display());
        }
        Command::Run => {
            let entries = p.run_study()?;
            p.emit_plots(&entries)?;
            if p.cfg.study != Study::BsHms && p.cfg.scenarios.is_none() {
                println!("no scenarios configured; skipped the out-of-sample test");
            }
        }
    }
    Ok(())
}

fn print_summary(rows: &[robhedge_cli::SummaryRow]) {
    println!("{:<12} {:<10} {:>8} {:>10} {:>10}", "strategy", "generator", "1/gamma", "mean", "std");
    for r in rows {
        let ig = r.inv_gamma.map_or(String::new(), |g| format!("{g}"));
        println!("{:<12} {:<10} {:>8} {:>10.6} {:>10.6}", r.strategy, r.generator, ig, r.mean, r.std);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, out) = match load(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut pipeline = match Pipeline::new(cfg, out, cli.command.name()) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match execute(&mut pipeline, cli.command) {
        Ok(()) => match pipeline.finish() {
            Ok(_) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            if let Err(e2) = pipeline.fail(&e) {
                eprintln!("error: could not write the failure report: {e2}");
            }
            ExitCode::FAILURE
        }
    }
}
