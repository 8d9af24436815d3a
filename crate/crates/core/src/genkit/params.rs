use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::paths::ChannelRole;
use crate::error::{invalid, Error, Result};
use crate::nnkit::{MlpParams, Tensor};

/// Black-Scholes: `dS = σ S dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsParams {
    pub sigma: f64,
    pub s0: f64,
}

/// Heston with `v0 = beta`: `dv = κ(β − v)dt + σ√v dW²`, `dS = S√v dW¹`, `d⟨W¹,W²⟩ = ρ dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub beta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub s0: f64,
}

/// Neural SDE with drift and diffusion networks acting on the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsdeParams {
    pub drift: MlpParams,
    pub diffusion: MlpParams,
    pub s0: Vec<f64>,
    #[serde(default)]
    pub train_s0: bool,
}

impl NsdeParams {
    /// Networks `d → hidden… → d` (drift) and `d → hidden… → d²` (diffusion).
    /// Output layers are shrunk by `output_scale` so fresh models start close to flat.
    pub fn init(s0: Vec<f64>, hidden: &[usize], output_scale: f64, seed: u64) -> Result<Self> {
        let d = s0.len();
        if d == 0 {
            return Err(invalid("NSDE state needs at least one dimension"));
        }
        let sizes = |out: usize| {
            let mut s = vec![d];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let mut drift = MlpParams::init(&sizes(d), seed)?;
        let mut diffusion = MlpParams::init(&sizes(d * d), seed.wrapping_add(1))?;
        for net in [&mut drift, &mut diffusion] {
            let mut ts = net.tensors_mut();
            let n = ts.len();
            ts[n - 2].scale_assign(output_scale);
        }
        Ok(Self { drift, diffusion, s0, train_s0: false })
    }

    pub fn dim(&self) -> usize {
        self.s0.len()
    }
}

/// Parameters ξ of a path generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum GeneratorParams {
    Bs(BsParams),
    Heston(HestonParams),
    Nsde(NsdeParams),
}

/// Lower bound used when projecting volatilities back into the admissible set.
pub const SIGMA_FLOOR: f64 = 1e-6;

impl GeneratorParams {
    pub fn bs(sigma: f64, s0: f64) -> Self {
        GeneratorParams::Bs(BsParams { sigma, s0 })
    }

    pub fn heston(kappa: f64, beta: f64, sigma: f64, rho: f64, s0: f64) -> Self {
        GeneratorParams::Heston(HestonParams { kappa, beta, sigma, rho, s0 })
    }

    pub fn variant(&self) -> &'static str {
        match self {
            GeneratorParams::Bs(_) => "bs",
            GeneratorParams::Heston(_) => "heston",
            GeneratorParams::Nsde(_) => "nsde",
        }
    }

    /// Checks the admissible set. Zero volatilities are accepted as boundary cases.
    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be finite, got {v}")))
            }
        };
        match self {
            GeneratorParams::Bs(p) => {
                finite("sigma", p.sigma)?;
                finite("s0", p.s0)?;
                if p.sigma < 0.0 {
                    return Err(invalid(format!("BS sigma must be >= 0, got {}", p.sigma)));
                }
                if p.s0 <= 0.0 {
                    return Err(invalid(format!("s0 must be positive, got {}", p.s0)));
                }
            }
            GeneratorParams::Heston(p) => {
                for (n, v) in [("kappa", p.kappa), ("beta", p.beta), ("sigma", p.sigma), ("rho", p.rho), ("s0", p.s0)] {
                    finite(n, v)?;
                }
                if p.kappa <= 0.0 {
                    return Err(invalid(format!("Heston kappa must be positive, got {}", p.kappa)));
                }
                if p.beta <= 0.0 {
                    return Err(invalid(format!("Heston beta must be positive, got {}", p.beta)));
                }
                if p.sigma < 0.0 {
                    return Err(invalid(format!("Heston sigma must be >= 0, got {}", p.sigma)));
                }
                if !(-1.0..=1.0).contains(&p.rho) {
                    return Err(invalid(format!("Heston rho must lie in [-1, 1], got {}", p.rho)));
                }
                if p.s0 <= 0.0 {
                    return Err(invalid(format!("s0 must be positive, got {}", p.s0)));
                }
            }
            GeneratorParams::Nsde(p) => {
                let d = p.dim();
                if d == 0 {
                    return Err(invalid("NSDE state needs at least one dimension"));
                }
                p.s0.iter().try_for_each(|&v| finite("s0", v))?;
                if p.drift.input_dim() != d || p.drift.output_dim() != d {
                    return Err(Error::Shape(format!("drift net must map R^{d} to R^{d}")));
                }
                if p.diffusion.input_dim() != d || p.diffusion.output_dim() != d * d {
                    return Err(Error::Shape(format!("diffusion net must map R^{d} to R^{}", d * d)));
                }
                p.drift.check_finite()?;
                p.diffusion.check_finite()?;
            }
        }
        Ok(())
    }

    /// Brownian dimension d'.
    pub fn noise_dim(&self) -> usize {
        match self {
            GeneratorParams::Bs(_) => 1,
            GeneratorParams::Heston(_) => 2,
            GeneratorParams::Nsde(p) => p.dim(),
        }
    }

    pub fn roles(&self) -> Vec<ChannelRole> {
        match self {
            GeneratorParams::Bs(_) => vec![ChannelRole::Asset],
            GeneratorParams::Heston(_) => vec![ChannelRole::Asset, ChannelRole::Variance, ChannelRole::VolSwap],
            GeneratorParams::Nsde(p) => {
                let mut r = vec![ChannelRole::Asset];
                r.extend(std::iter::repeat(ChannelRole::Hidden).take(p.dim() - 1));
                r
            }
        }
    }

    /// Initial state of each channel.
    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            GeneratorParams::Bs(p) => vec![p.s0],
            GeneratorParams::Heston(p) => vec![p.s0, p.beta, 0.0],
            GeneratorParams::Nsde(p) => p.s0.clone(),
        }
    }

    /// Trainable parameters as tensors, in binding order.
    pub fn trainable_tensors(&self) -> Vec<Tensor> {
        match self {
            GeneratorParams::Bs(p) => vec![Tensor::scalar(p.sigma)],
            GeneratorParams::Heston(p) => {
                vec![Tensor::scalar(p.kappa), Tensor::scalar(p.beta), Tensor::scalar(p.sigma), Tensor::scalar(p.rho)]
            }
            GeneratorParams::Nsde(p) => {
                let mut v: Vec<Tensor> = p.drift.tensors().into_iter().cloned().collect();
                v.extend(p.diffusion.tensors().into_iter().cloned());
                if p.train_s0 {
                    v.push(Tensor::row(p.s0.clone()));
                }
                v
            }
        }
    }

    /// Writes back tensors produced in [`GeneratorParams::trainable_tensors`] order.
    pub fn set_trainable(&mut self, tensors: &[Tensor]) -> Result<()> {
        let expected = self.trainable_tensors();
        if tensors.len() != expected.len() || tensors.iter().zip(&expected).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Shape("trainable tensors do not match the generator".into()));
        }
        match self {
            GeneratorParams::Bs(p) => p.sigma = tensors[0].item(),
            GeneratorParams::Heston(p) => {
                p.kappa = tensors[0].item();
                p.beta = tensors[1].item();
                p.sigma = tensors[2].item();
                p.rho = tensors[3].item();
            }
            GeneratorParams::Nsde(p) => {
                let nd = p.drift.tensors().len();
                let nf = p.diffusion.tensors().len();
                for (dst, src) in p.drift.tensors_mut().into_iter().zip(&tensors[..nd]) {
                    *dst = src.clone();
                }
                for (dst, src) in p.diffusion.tensors_mut().into_iter().zip(&tensors[nd..nd + nf]) {
                    *dst = src.clone();
                }
                if p.train_s0 {
                    p.s0 = tensors[nd + nf].data().to_vec();
                }
            }
        }
        Ok(())
    }

    /// Projects back into the admissible set after an optimiser step.
    pub fn project(&mut self) {
        match self {
            GeneratorParams::Bs(p) => p.sigma = p.sigma.max(SIGMA_FLOOR),
            GeneratorParams::Heston(p) => {
                p.kappa = p.kappa.max(SIGMA_FLOOR);
                p.beta = p.beta.max(SIGMA_FLOOR);
                p.sigma = p.sigma.max(SIGMA_FLOOR);
                p.rho = p.rho.clamp(-1.0, 1.0);
            }
            GeneratorParams::Nsde(_) => {}
        }
    }

    /// Parametric coordinates used for distances between scenarios.
    pub fn coordinates(&self) -> Vec<f64> {
        match self {
            GeneratorParams::Bs(p) => vec![p.sigma],
            GeneratorParams::Heston(p) => vec![p.kappa, p.beta, p.sigma, p.rho],
            GeneratorParams::Nsde(p) => {
                let mut v = p.drift.to_flat();
                v.extend(p.diffusion.to_flat());
                v
            }
        }
    }

    /// Euclidean distance between parameter coordinates of the same variant.
    pub fn distance(&self, other: &GeneratorParams) -> Result<f64> {
        let (a, b) = (self.coordinates(), other.coordinates());
        if self.variant() != other.variant() || a.len() != b.len() {
            return Err(invalid("distance between generators of different kinds"));
        }
        Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
    }
}

impl fmt::Display for GeneratorParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorParams::Bs(p) => write!(f, "sigma={:.6}", p.sigma),
            GeneratorParams::Heston(p) => {
                write!(f, "kappa={:.6} beta={:.6} sigma={:.6} rho={:.6}", p.kappa, p.beta, p.sigma, p.rho)
            }
            GeneratorParams::Nsde(p) => {
                write!(f, "nsde d={} params={}", p.dim(), p.drift.param_count() + p.diffusion.param_count())
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HestonRow {
    variant: String,
    kappa: f64,
    beta: f64,
    sigma: f64,
    rho: f64,
    s0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BsRow {
    variant: String,
    sigma: f64,
    s0: f64,
}

/// Writes BS or Heston parameters as a scenario CSV. All rows must share a variant.
pub fn write_params_csv(params: &[GeneratorParams], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let variant = params.first().map(|p| p.variant());
    for p in params {
        if Some(p.variant()) != variant {
            return Err(invalid("scenario files hold a single generator variant"));
        }
        match p {
            GeneratorParams::Bs(b) => w.serialize(BsRow { variant: "bs".into(), sigma: b.sigma, s0: b.s0 })?,
            GeneratorParams::Heston(h) => w.serialize(HestonRow {
                variant: "heston".into(),
                kappa: h.kappa,
                beta: h.beta,
                sigma: h.sigma,
                rho: h.rho,
                s0: h.s0,
            })?,
            GeneratorParams::Nsde(_) => return Err(invalid("NSDE parameters are stored as JSON, not CSV")),
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a scenario CSV without validating parameter ranges, so callers can
/// apply their own clamps first.
pub fn read_params_csv(input: impl Read) -> Result<Vec<GeneratorParams>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.to_string()).collect();
    let heston = ["variant", "kappa", "beta", "sigma", "rho", "s0"];
    let bs = ["variant", "sigma", "s0"];
    if headers == heston {
        r.deserialize::<HestonRow>()
            .map(|row| {
                let row = row?;
                check_variant(&row.variant, "heston")?;
                Ok(GeneratorParams::heston(row.kappa, row.beta, row.sigma, row.rho, row.s0))
            })
            .collect()
    } else if headers == bs {
        r.deserialize::<BsRow>()
            .map(|row| {
                let row = row?;
                check_variant(&row.variant, "bs")?;
                Ok(GeneratorParams::bs(row.sigma, row.s0))
            })
            .collect()
    } else {
        Err(Error::Parse(format!("unrecognised scenario header {headers:?}")))
    }
}

fn check_variant(got: &str, want: &str) -> Result<()> {
    if got.eq_ignore_ascii_case(want) {
        Ok(())
    } else {
        Err(Error::Parse(format!("row variant '{got}' in a {want} file")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        assert!(GeneratorParams::bs(0.2, 1.0).validate().is_ok());
        assert!(GeneratorParams::bs(0.0, 1.0).validate().is_ok());
        assert!(GeneratorParams::bs(-0.1, 1.0).validate().is_err());
        assert!(GeneratorParams::bs(0.2, 0.0).validate().is_err());
        assert!(GeneratorParams::heston(1.0, 0.04, 0.2, 0.8, 1.0).validate().is_ok());
        assert!(GeneratorParams::heston(1.0, 0.04, 0.2, 1.2, 1.0).validate().is_err());
        assert!(GeneratorParams::heston(0.0, 0.04, 0.2, 0.0, 1.0).validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let params = vec![GeneratorParams::heston(1.0, 0.04, 0.2, -0.7, 1.0), GeneratorParams::heston(2.0, 0.05, 0.3, 0.1, 1.0)];
        let mut buf = Vec::new();
        write_params_csv(&params, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("variant,kappa,beta,sigma,rho,s0"));
        assert_eq!(read_params_csv(buf.as_slice()).unwrap(), params);

        let bs = vec![GeneratorParams::bs(0.25, 1.0)];
        let mut buf = Vec::new();
        write_params_csv(&bs, &mut buf).unwrap();
        assert_eq!(read_params_csv(buf.as_slice()).unwrap(), bs);
    }

    #[test]
    fn rejects_unknown_header() {
        assert!(read_params_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn projection_clamps() {
        let mut p = GeneratorParams::heston(1.0, 0.04, -0.3, 1.5, 1.0);
        p.project();
        assert_eq!(p, GeneratorParams::heston(1.0, 0.04, SIGMA_FLOOR, 1.0, 1.0));
    }

    #[test]
    fn json_is_tagged() {
        let text = serde_json::to_string(&GeneratorParams::bs(0.2, 1.0)).unwrap();
        assert_eq!(text, r#"{"variant":"bs","sigma":0.2,"s0":1.0}"#);
    }
}
