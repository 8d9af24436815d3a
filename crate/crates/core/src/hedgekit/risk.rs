//! Risk functionals of a P&L sample. Lower is better for [`RiskMeasureSpec::loss`].

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nnkit::{CustomOp, Tensor, Var};

/// Continuous piecewise-linear function through `(knots[i], values[i])`,
/// extended linearly beyond the end knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(invalid("piecewise-linear function needs matching knots and values, at least two"));
        }
        crate::error::ensure_finite(&knots, "knot")?;
        crate::error::ensure_finite(&values, "knot value")?;
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("knots must be strictly increasing"));
        }
        Ok(Self { knots, values })
    }

    /// `u(x) = x`.
    pub fn identity() -> Self {
        Self { knots: vec![0.0, 1.0], values: vec![0.0, 1.0] }
    }

    /// `u(x) = x⁺ / (1 − α)`, the loss function of CVaR at level α.
    pub fn cvar(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(invalid(format!("CVaR level must lie in [0, 1), got {alpha}")));
        }
        Self::new(vec![-1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0 / (1.0 - alpha)])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(k, v)| (v[1] - v[0]) / (k[1] - k[0]))
            .collect()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        let n = k.len();
        let seg = if x <= k[0] {
            0
        } else if x >= k[n - 1] {
            n - 2
        } else {
            k.partition_point(|&kn| kn <= x) - 1
        };
        let t = (x - k[seg]) / (k[seg + 1] - k[seg]);
        self.values[seg] + t * (self.values[seg + 1] - self.values[seg])
    }

    /// Right derivative.
    pub fn derivative(&self, x: f64) -> f64 {
        let slopes = self.slopes();
        let k = &self.knots;
        let seg = k.partition_point(|&kn| kn <= x).clamp(1, k.len() - 1) - 1;
        slopes[seg]
    }

    /// Checks that `u` is non-decreasing and convex and that the OCE infimum is
    /// finite (end slopes straddle 1).
    pub fn validate_for_oce(&self) -> Result<()> {
        let s = self.slopes();
        if s.iter().any(|&v| v < 0.0) {
            return Err(invalid("OCE loss function must be non-decreasing"));
        }
        if s.windows(2).any(|w| w[1] < w[0] - 1e-12 * w[0].abs().max(1.0)) {
            return Err(invalid("OCE loss function must be convex"));
        }
        if s[0] > 1.0 || *s.last().unwrap() < 1.0 {
            return Err(invalid("OCE loss function needs left slope <= 1 <= right slope"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RiskMeasureSpec {
    /// `(1/λ) log E[exp(−λX)]`
    Entropic { lambda: f64 },
    /// Utility `E[(1 − exp(−λX))/λ]`; its loss is the negated utility.
    ExpUtility { lambda: f64 },
    /// `inf_w { w + E[u(−X − w)] }`
    Oce { u: PiecewiseLinear },
}

impl RiskMeasureSpec {
    pub fn entropic(lambda: f64) -> Self {
        RiskMeasureSpec::Entropic { lambda }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RiskMeasureSpec::Entropic { lambda } | RiskMeasureSpec::ExpUtility { lambda } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(invalid(format!("risk aversion must be positive, got {lambda}")));
                }
                Ok(())
            }
            RiskMeasureSpec::Oce { u } => u.validate_for_oce(),
        }
    }

    /// `+1` when the functional is a risk (lower is better), `−1` for utilities.
    pub fn orientation(&self) -> f64 {
        match self {
            RiskMeasureSpec::ExpUtility { .. } => -1.0,
            _ => 1.0,
        }
    }

    /// The functional as defined for each variant.
    pub fn value(&self, sample: &[f64]) -> Result<f64> {
        self.validate()?;
        if sample.is_empty() {
            return Err(Error::Empty("risk sample".into()));
        }
        crate::error::ensure_finite(sample, "P&L sample")?;
        let v = match self {
            RiskMeasureSpec::Entropic { lambda } => {
                let shift = sample.iter().map(|x| -lambda * x).fold(f64::NEG_INFINITY, f64::max);
                let mean = sample.iter().map(|x| (-lambda * x - shift).exp()).sum::<f64>() / sample.len() as f64;
                (mean.ln() + shift) / lambda
            }
            RiskMeasureSpec::ExpUtility { lambda } => {
                sample.iter().map(|x| (1.0 - (-lambda * x).exp()) / lambda).sum::<f64>() / sample.len() as f64
            }
            RiskMeasureSpec::Oce { u } => oce_minimize(u, sample, None)?.1,
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("risk value of {self:?}")));
        }
        Ok(v)
    }

    /// The quantity the hedger minimises.
    pub fn loss(&self, sample: &[f64]) -> Result<f64> {
        Ok(self.orientation() * self.value(sample)?)
    }

    /// [`RiskMeasureSpec::loss`] of a `[B × 1]` node, as a `1 × 1` node.
    pub fn loss_on_tape<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.validate()?;
        if x.shape().1 != 1 || x.shape().0 == 0 {
            return Err(Error::Shape(format!("risk expects a B×1 sample, got {:?}", x.shape())));
        }
        let out = match self {
            RiskMeasureSpec::Entropic { lambda } => {
                let shift = x.value().data().iter().map(|v| -lambda * v).fold(f64::NEG_INFINITY, f64::max);
                x.scale(-lambda).add_scalar(-shift).exp().mean().ln().add_scalar(shift).scale(1.0 / lambda)
            }
            RiskMeasureSpec::ExpUtility { lambda } => x.scale(-lambda).exp().add_scalar(-1.0).mean().scale(1.0 / lambda),
            RiskMeasureSpec::Oce { u } => {
                let (w, value) = oce_minimize(u, x.value().data(), None)?;
                let op = OceOp { u: u.clone(), w };
                x.tape().custom(Rc::new(op), &[x], Tensor::scalar(value))
            }
        };
        if !out.value().is_finite() {
            return Err(Error::NonFinite(format!("risk value of {self:?}")));
        }
        Ok(out)
    }
}

/// OCE value of a weighted sample, `inf_w { w + Σ p_i u(−x_i − w) }`.
pub fn oce_weighted(u: &PiecewiseLinear, sample: &[f64], weights: &[f64]) -> Result<f64> {
    u.validate_for_oce()?;
    if sample.len() != weights.len() || sample.is_empty() {
        return Err(invalid("OCE sample and weights must be non-empty and of equal length"));
    }
    if weights.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(invalid("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(invalid("weights sum to zero"));
    }
    let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
    Ok(oce_minimize(u, sample, Some(&p))?.1)
}

fn oce_objective(u: &PiecewiseLinear, x: &[f64], p: Option<&[f64]>, w: f64) -> f64 {
    match p {
        None => w + x.iter().map(|xi| u.eval(-xi - w)).sum::<f64>() / x.len() as f64,
        Some(p) => w + x.iter().zip(p).map(|(xi, pi)| pi * u.eval(-xi - w)).sum::<f64>(),
    }
}

/// Golden-section search followed by an exact polish over the kinks of the
/// objective; returns the minimiser and the minimum.
fn oce_minimize(u: &PiecewiseLinear, x: &[f64], p: Option<&[f64]>) -> Result<(f64, f64)> {
    u.validate_for_oce()?;
    let (kmin, kmax) = (u.knots[0], *u.knots.last().unwrap());
    let (xmin, xmax) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    // every kink w = −x_i − k_j lies inside this bracket, and so does a minimiser
    let mut a = -xmax - kmax - 1.0;
    let mut b = -xmin - kmin + 1.0;
    let f = |w: f64| oce_objective(u, x, p, w);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-8 * (1.0 + a.abs().max(b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let slack = 1e-6 * (1.0 + a.abs().max(b.abs()));
    let (lo, hi) = (a - slack, b + slack);
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid));
    for &xi in x {
        for &k in &u.knots {
            let w = -xi - k;
            if (lo..=hi).contains(&w) {
                let v = f(w);
                if v < best.1 {
                    best = (w, v);
                }
            }
        }
    }
    Ok(best)
}

/// OCE on the tape; the gradient follows from the envelope theorem at the
/// optimal `w`.
struct OceOp {
    u: PiecewiseLinear,
    w: f64,
}

impl CustomOp for OceOp {
    fn name(&self) -> &str {
        "oce"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let g = grad_out.item();
        let n = x.len() as f64;
        // A sample whose argument sits on a kink pins the minimiser, which then
        // moves with it; such samples take the weight that keeps the total at 1.
        let tol = 1e-12 * (1.0 + self.w.abs());
        let on_kink = |xi: f64| self.u.knots.iter().any(|k| (-xi - self.w - k).abs() <= tol);
        let pinned = x.data().iter().filter(|&&xi| on_kink(xi)).count();
        let free: f64 = x.data().iter().filter(|&&xi| !on_kink(xi)).map(|&xi| self.u.derivative(-xi - self.w) / n).sum();
        let residual = if pinned > 0 { (1.0 - free) / pinned as f64 } else { 0.0 };
        vec![Some(x.map(|xi| if on_kink(xi) { -g * residual } else { -g * self.u.derivative(-xi - self.w) / n }))]
    }
}
