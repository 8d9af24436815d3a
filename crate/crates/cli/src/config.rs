//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use robhedge::genkit::{GeneratorParams, SigFitConfig, TimeGrid};
use robhedge::hedgekit::{HedgeTask, Payoff, RiskMeasureSpec, TrainSchedule, DEFAULT_HIDDEN};
use robhedge::robust::GanConfig;
use robhedge::sigkit::{Augmentation, DEFAULT_CHAIN, DEFAULT_DEPTH};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    BsHms,
    BsOosp,
    HestonOosp,
    NsdeCompare,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::BsHms => "bs-hms",
            Study::BsOosp => "bs-oosp",
            Study::HestonOosp => "heston-oosp",
            Study::NsdeCompare => "nsde-compare",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    /// The estimated model.
    pub generator: GeneratorParams,
    pub steps: usize,
    pub dt: f64,
    pub payoff: Payoff,
    pub risk: RiskMeasureSpec,
}

impl MarketConfig {
    pub fn task(&self) -> CliResult<HedgeTask> {
        Ok(HedgeTask { grid: TimeGrid::uniform(self.dt, self.steps)?, risk: self.risk.clone(), payoff: self.payoff })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HedgerConfig {
    pub hidden: Vec<usize>,
    pub schedule: TrainSchedule,
    /// Scale of the hedge schedules; the experiment scale when absent.
    pub scale: Option<f64>,
}

impl Default for HedgerConfig {
    fn default() -> Self {
        Self { hidden: DEFAULT_HIDDEN.to_vec(), schedule: TrainSchedule::default(), scale: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    None,
    VolMse,
    HmsVol,
    SigMmd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    /// Penalty multipliers `1/γ`, one robust run each.
    pub inv_gamma: Vec<f64>,
    /// Defaults to the volatility of a Black-Scholes reference.
    #[serde(default)]
    pub sigma_ref: Option<f64>,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_chain")]
    pub chain: Vec<Augmentation>,
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    /// Reference paths behind the expected signature.
    #[serde(default = "default_reference_paths")]
    pub reference_paths: usize,
}

fn default_depth() -> usize {
    DEFAULT_DEPTH
}
fn default_chain() -> Vec<Augmentation> {
    DEFAULT_CHAIN.to_vec()
}
fn default_channels() -> Vec<usize> {
    vec![0, 1]
}
fn default_reference_paths() -> usize {
    4096
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Inverse-calibrated Black-Scholes volatilities.
    BsInverse,
    /// Lagged differences of a daily Heston parameter file.
    HestonFile,
    /// Parameters read verbatim.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_n_obs")]
    pub n_obs: usize,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_lags")]
    pub lags: usize,
    #[serde(default = "default_eval_paths")]
    pub eval_paths: usize,
    /// Also train the hedge on the pooled scenarios.
    #[serde(default = "yes")]
    pub test_hedge: bool,
}

fn default_m() -> usize {
    200
}
fn default_n_obs() -> usize {
    45
}
fn default_lags() -> usize {
    10
}
fn default_eval_paths() -> usize {
    10_000
}
fn yes() -> bool {
    true
}

/// NSDE fitted to the estimated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default = "default_nsde_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_output_scale")]
    pub output_scale: f64,
    #[serde(default = "default_reference_paths")]
    pub target_paths: usize,
    #[serde(default)]
    pub fit: SigFitConfig,
}

fn default_nsde_hidden() -> Vec<usize> {
    vec![36, 36, 36]
}
fn default_output_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub intervals: usize,
    pub time_steps: usize,
    pub s_lo: f64,
    pub s_hi: f64,
    pub points: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { intervals: 400, time_steps: 400, s_lo: 0.8, s_hi: 1.2, points: 41 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: Study,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Artifact directory; excluded from the config hash.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub market: MarketConfig,
    #[serde(default)]
    pub hedger: HedgerConfig,
    #[serde(default)]
    pub gan: GanConfig,
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub scenarios: Option<ScenarioConfig>,
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
}

fn default_scale() -> f64 {
    0.05
}

fn field(name: &str, msg: impl Into<String>) -> CliError {
    CliError::Config { field: name.to_string(), message: msg.into() }
}

impl ExperimentConfig {
    /// Parses and validates a config file. Relative data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::ConfigFile { path: path.to_path_buf(), source: e })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::ConfigParse { path: path.to_path_buf(), source: e })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(sc) = cfg.scenarios.as_mut() {
            if let Some(p) = sc.path.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::ConfigParse { path: PathBuf::from("<inline>"), source: e })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(field("scale", format!("must lie in (0, 1], got {}", self.scale)));
        }
        self.market.generator.validate().map_err(|e| field("market.generator", e.to_string()))?;
        self.market.task().map_err(|e| field("market", e.to_string()))?;
        self.market.risk.validate().map_err(|e| field("market.risk", e.to_string()))?;
        if self.hedger.hidden.is_empty() {
            return Err(field("hedger.hidden", "needs at least one hidden layer"));
        }
        self.hedger.schedule.validate().map_err(|e| field("hedger.schedule", e.to_string()))?;
        if let Some(s) = self.hedger.scale {
            if !(s > 0.0 && s <= 1.0) {
                return Err(field("hedger.scale", format!("must lie in (0, 1], got {s}")));
            }
        }
        self.gan.validate().map_err(|e| field("gan", e.to_string()))?;
        let p = &self.penalty;
        if p.inv_gamma.is_empty() {
            return Err(field("penalty.inv_gamma", "grid must not be empty"));
        }
        if let Some(g) = p.inv_gamma.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(field("penalty.inv_gamma", format!("entries must be positive, got {g}")));
        }
        match (p.kind, &self.market.generator) {
            (PenaltyKind::VolMse | PenaltyKind::HmsVol, GeneratorParams::Bs(_)) => {}
            (PenaltyKind::VolMse | PenaltyKind::HmsVol, _) if p.sigma_ref.is_none() => {
                return Err(field("penalty.sigma_ref", "required unless the generator is Black-Scholes"));
            }
            (PenaltyKind::SigMmd, g) => {
                let dims = g.roles().len();
                if p.channels.is_empty() || p.channels.iter().any(|&c| c >= dims) {
                    return Err(field("penalty.channels", format!("must select among {dims} channels")));
                }
            }
            _ => {}
        }
        match self.study {
            Study::BsHms | Study::BsOosp => {
                if !matches!(self.market.generator, GeneratorParams::Bs(_)) {
                    return Err(field("market.generator", format!("{} needs a Black-Scholes generator", self.study.name())));
                }
            }
            Study::HestonOosp | Study::NsdeCompare => {
                if !matches!(self.market.generator, GeneratorParams::Heston(_)) {
                    return Err(field("market.generator", format!("{} needs a Heston generator", self.study.name())));
                }
            }
        }
        if self.study == Study::NsdeCompare && self.calibration.is_none() {
            return Err(field("calibration", "nsde-compare needs a [calibration] section"));
        }
        if matches!(self.study, Study::BsOosp | Study::HestonOosp) && self.scenarios.is_none() {
            return Err(field("scenarios", format!("{} needs a [scenarios] section", self.study.name())));
        }
        if let Some(sc) = &self.scenarios {
            if sc.eval_paths < robhedge::evalkit::MIN_EVAL_PATHS {
                return Err(field("scenarios.eval_paths", format!("must be at least {}", robhedge::evalkit::MIN_EVAL_PATHS)));
            }
            match sc.kind {
                ScenarioKind::BsInverse => {
                    if sc.n_obs < 2 || sc.m == 0 {
                        return Err(field("scenarios", "bs-inverse needs n_obs >= 2 and m >= 1"));
                    }
                }
                ScenarioKind::HestonFile | ScenarioKind::File => match &sc.path {
                    None => return Err(field("scenarios.path", "required for file-based scenarios")),
                    Some(path) if !path.exists() => {
                        return Err(field("scenarios.path", format!("{} does not exist", path.display())))
                    }
                    _ => {}
                },
            }
        }
        if let Some(b) = &self.benchmark {
            if !(b.s_lo < b.s_hi) || b.points < 2 {
                return Err(field("benchmark", "needs s_lo < s_hi and at least two points"));
            }
        }
        Ok(())
    }

    /// Reference volatility of the volatility penalties.
    pub fn sigma_ref(&self) -> Option<f64> {
        self.penalty.sigma_ref.or(match &self.market.generator {
            GeneratorParams::Bs(b) => Some(b.sigma),
            _ => None,
        })
    }

    /// Hedge schedule after scaling.
    pub fn schedule(&self) -> CliResult<TrainSchedule> {
        Ok(self.hedger.schedule.scaled(self.hedger.scale.unwrap_or(self.scale))?)
    }

    /// Adversarial settings with the experiment's seed and scale.
    pub fn gan_config(&self, seed: u64) -> GanConfig {
        GanConfig { seed, scale: self.scale, ..self.gan.clone() }
    }

    /// SHA-256 over the canonical JSON form of the config without `out`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(map) = v.as_object_mut() {
            map.remove("out");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
study = "bs-oosp"
[market]
generator = { variant = "bs", sigma = 0.2, s0 = 1.0 }
steps = 18
dt = 0.0196078431372549
payoff = { kind = "call", strike = 1.0 }
risk = { kind = "entropic", lambda = 130.0 }
[penalty]
kind = "vol-mse"
inv_gamma = [100.0]
[scenarios]
kind = "bs-inverse"
"#;

    #[test]
    fn minimal_config_gets_desk_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.scale, 0.05);
        let sc = c.scenarios.as_ref().unwrap();
        assert_eq!((sc.m, sc.n_obs, sc.eval_paths), (200, 45, 10_000));
        assert_eq!(c.sigma_ref(), Some(0.2));
    }

    #[test]
    fn hash_ignores_out_but_not_seed() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let b = ExperimentConfig { out: Some("elsewhere".into()), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
        // explicit defaults hash like omitted ones
        let d = ExperimentConfig::from_toml(&MINIMAL.replace("study = \"bs-oosp\"", "study = \"bs-oosp\"\nscale = 0.05")).unwrap();
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn field_errors_name_the_field() {
        let err = ExperimentConfig::from_toml(&MINIMAL.replace("inv_gamma = [100.0]", "inv_gamma = []")).unwrap_err();
        assert!(err.to_string().contains("penalty.inv_gamma"), "{err}");
        let err = ExperimentConfig::from_toml(&MINIMAL.replace("study = \"bs-oosp\"", "study = \"bs-oosp\"\nscale = 2.0"))
            .unwrap_err();
        assert!(err.to_string().contains("scale"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_toml(&format!("{MINIMAL}\n[hedger]\nhiden = [3]\n")).is_err());
    }
}
