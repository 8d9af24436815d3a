use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use robhedge::evalkit::OospReport;
use robhedge_cli::{ExperimentConfig, Manifest, FAILURE_REPORT, MANIFEST};

fn robhedge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robhedge"))
        .args(args)
        .env_remove("ROBHEDGE_CONFIG")
        .env_remove("ROBHEDGE_SEED")
        .env_remove("ROBHEDGE_SCALE")
        .env_remove("ROBHEDGE_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
study = "bs-oosp"
seed = 3
scale = 0.01

[market]
generator = { variant = "bs", sigma = 0.2, s0 = 1.0 }
steps = 18
dt = 0.0196078431372549
payoff = { kind = "call", strike = 1.0 }
risk = { kind = "entropic", lambda = 130.0 }

[hedger]
hidden = [16, 16]
scale = 0.004

[penalty]
kind = "vol-mse"
inv_gamma = [50.0, 100.0]

[scenarios]
kind = "bs-inverse"
m = 4
eval_paths = 1000
"#;

#[test]
fn missing_config_names_the_path() {
    let o = robhedge(&["oosp", "--config", "/nonexistent/study.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/study.toml"), "{}", stderr(&o));
}

#[test]
fn no_config_is_a_usage_error() {
    let o = robhedge(&["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn invalid_field_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, TINY.replace("scale = 0.01", "scale = 1.5")).unwrap();
    let o = robhedge(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`scale`"), "{}", stderr(&o));

    fs::write(&path, TINY.replace("m = 4", "m = 4\ncolour = 1")).unwrap();
    let o = robhedge(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["bs-oosp.toml", "bs-hms.toml", "heston-oosp.toml", "nsde-compare.toml"] {
        let cfg = ExperimentConfig::load(&root.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(format!("{}.toml", cfg.study.name()), name);
    }
}

#[test]
fn oosp_without_training_fails_with_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let o = robhedge(&["oosp", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(FAILURE_REPORT)).unwrap()).unwrap();
    assert_eq!(report["command"], "oosp");
    assert!(report["error"].as_str().unwrap().contains("deep_hedge"), "{report}");
}

#[test]
fn sweep_writes_round_tripping_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let o = robhedge(&["sweep-gamma", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest.commands, vec!["sweep-gamma"]);
    for f in &manifest.files {
        assert!(out.join(f).exists(), "manifest lists missing {f}");
    }
    for id in ["bs_deep_hedge", "bs_robust_50", "bs_robust_100", "test_hedge"] {
        let text = fs::read(out.join("oosp").join(format!("{id}.csv"))).unwrap();
        assert!(text.starts_with(b"scenario_id,param_summary,distance_to_ref,loss\n"));
        let report = OospReport::read_csv(text.as_slice(), id, 1000).unwrap();
        assert_eq!(report.losses.len(), 4);
        let mut again = Vec::new();
        report.write_csv(&mut again).unwrap();
        assert_eq!(again, text);
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("oosp").join(format!("{id}.json"))).unwrap()).unwrap();
        assert!((summary["mean"].as_f64().unwrap() - report.mean).abs() < 1e-12);
    }
    let mut summary = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    assert_eq!(summary.records().count(), 4);

    // a second command on the same config reuses the trained strategies
    let o = robhedge(&["emit-plots", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plots = fs::read_to_string(out.join("plots/positions.csv")).unwrap();
    assert!(plots.lines().next().unwrap().starts_with("s,bs_delta,"));
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest.commands, vec!["sweep-gamma", "emit-plots"]);
}
