//! Finite-difference solver for the volatility-uncertainty correction of a
//! Black-Scholes call hedge, and its comparison with learned strategies.
//!
//! `w_t + ½σ²s² w_ss + T(σ_src s² Γ_BS)²/4 = 0`, `w(T,·) = 0`, solved in
//! `x = ln s` by Crank-Nicolson with `w = 0` at both ends of the domain.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::stats::pearson;
use crate::error::{invalid, Error, Result};
use crate::hedgekit::{bs_call_delta, bs_call_gamma, StrategySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeSpec {
    pub s0: f64,
    pub strike: f64,
    /// Diffusion volatility.
    pub sigma: f64,
    /// Volatility inside the source term; 0 switches the source off.
    pub sigma_source: f64,
    pub maturity: f64,
    /// Domain `[lower·s0, upper·s0]`.
    pub lower: f64,
    pub upper: f64,
    /// Space intervals.
    pub intervals: usize,
    pub time_steps: usize,
}

impl PdeSpec {
    /// Grid used for the call benchmark.
    pub fn call(sigma: f64, strike: f64, maturity: f64) -> Self {
        Self {
            s0: 1.0,
            strike,
            sigma,
            sigma_source: sigma,
            maturity,
            lower: 0.5,
            upper: 2.0,
            intervals: 400,
            time_steps: 400,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive, got {v}")))
            }
        };
        pos(self.s0, "s0")?;
        pos(self.strike, "strike")?;
        pos(self.sigma, "sigma")?;
        pos(self.maturity, "maturity")?;
        if !(self.sigma_source >= 0.0 && self.sigma_source.is_finite()) {
            return Err(invalid(format!("source volatility must be non-negative, got {}", self.sigma_source)));
        }
        if !(self.lower > 0.0 && self.lower <= 0.5 && self.upper >= 2.0 && self.upper.is_finite()) {
            return Err(invalid(format!("domain [{}, {}]·s0 must contain [0.5, 2]·s0", self.lower, self.upper)));
        }
        if self.intervals < 199 {
            return Err(invalid(format!("need at least 200 space nodes, got {}", self.intervals + 1)));
        }
        if self.time_steps < 2 || self.time_steps % 2 != 0 {
            return Err(invalid(format!("time steps must be even and at least 2, got {}", self.time_steps)));
        }
        Ok(())
    }

    fn source(&self, t: f64, s: f64) -> f64 {
        let g = bs_call_gamma(s, self.strike, self.sigma_source, self.maturity - t);
        let v = self.sigma_source * s * s * g;
        self.maturity * v * v / 4.0
    }
}

/// Solved grid. `w[k]` is the slice at `t[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub spec: PdeSpec,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub w: Vec<Vec<f64>>,
}

impl PdeGrid {
    fn dx(&self) -> f64 {
        (self.spec.upper / self.spec.lower).ln() / self.spec.intervals as f64
    }

    /// Index of the time node closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        let dt = self.spec.maturity / self.spec.time_steps as f64;
        ((t / dt).round().max(0.0) as usize).min(self.spec.time_steps)
    }

    /// `∂_s w` by central differences at interior nodes; zero at the boundary nodes.
    pub fn delta_u(&self, k: usize) -> Vec<f64> {
        let (w, dx) = (&self.w[k], self.dx());
        let mut out = vec![0.0; w.len()];
        for i in 1..w.len() - 1 {
            out[i] = (w[i + 1] - w[i - 1]) / (2.0 * dx * self.s[i]);
        }
        out
    }

    /// `w(t,s)` by linear interpolation in `ln s` on the nearest time slice.
    pub fn w_at(&self, t: f64, s: f64) -> Result<f64> {
        interp(&self.s, &self.w[self.time_index(t)], s, self.dx())
    }

    pub fn delta_u_at(&self, t: f64, s: f64) -> Result<f64> {
        interp(&self.s, &self.delta_u(self.time_index(t)), s, self.dx())
    }

    pub fn delta_bs(&self, t: f64, s: f64) -> f64 {
        bs_call_delta(s, self.spec.strike, self.spec.sigma, self.spec.maturity - t)
    }

    pub fn gamma_bs(&self, t: f64, s: f64) -> f64 {
        bs_call_gamma(s, self.spec.strike, self.spec.sigma, self.spec.maturity - t)
    }
}

fn interp(s: &[f64], v: &[f64], at: f64, dx: f64) -> Result<f64> {
    if !(at >= s[0] && at <= s[s.len() - 1]) {
        return Err(invalid(format!("s = {at} lies outside the PDE grid [{}, {}]", s[0], s[s.len() - 1])));
    }
    let pos = (at / s[0]).ln() / dx;
    let i = (pos.floor() as usize).min(s.len() - 2);
    let f = pos - i as f64;
    Ok(v[i] * (1.0 - f) + v[i + 1] * f)
}

/// Thomas algorithm for a tridiagonal system with constant bands.
fn solve_tridiagonal(lo: f64, diag: f64, up: f64, rhs: &mut [f64], scratch: &mut [f64]) -> Result<()> {
    let n = rhs.len();
    let mut denom = diag;
    scratch[0] = up / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag - lo * scratch[i - 1];
        if denom.abs() < 1e-300 {
            return Err(Error::NonFinite("singular tridiagonal system".into()));
        }
        scratch[i] = up / denom;
        rhs[i] = (rhs[i] - lo * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
    Ok(())
}

/// Backward Crank-Nicolson march from `w(T,·) = 0`.
pub fn hms_pde_solve(spec: &PdeSpec) -> Result<PdeGrid> {
    spec.validate()?;
    let (nx, nt) = (spec.intervals, spec.time_steps);
    let (x0, x1) = ((spec.lower * spec.s0).ln(), (spec.upper * spec.s0).ln());
    let dx = (x1 - x0) / nx as f64;
    let dt = spec.maturity / nt as f64;
    let s: Vec<f64> = (0..=nx).map(|i| (x0 + i as f64 * dx).exp()).collect();
    let t: Vec<f64> = (0..=nt).map(|k| k as f64 * dt).collect();

    // L w = a w_xx + b w_x with a = σ²/2, b = −σ²/2
    let a = 0.5 * spec.sigma * spec.sigma;
    let (lo, mid, up) = (a / (dx * dx) - (-a) / (2.0 * dx), -2.0 * a / (dx * dx), a / (dx * dx) + (-a) / (2.0 * dx));
    let h = 0.5 * dt;
    let interior = nx - 1;
    let mut w = vec![vec![0.0; nx + 1]; nt + 1];
    let mut rhs = vec![0.0; interior];
    let mut scratch = vec![0.0; interior];
    for k in (0..nt).rev() {
        let tm = t[k] + h;
        let next = &w[k + 1];
        for j in 0..interior {
            let i = j + 1;
            let lw = lo * next[i - 1] + mid * next[i] + up * next[i + 1];
            rhs[j] = next[i] + h * lw + dt * spec.source(tm, s[i]);
        }
        solve_tridiagonal(-h * lo, 1.0 - h * mid, -h * up, &mut rhs, &mut scratch)?;
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("PDE solution at t = {}", t[k])));
        }
        w[k][1..nx].copy_from_slice(&rhs);
    }
    Ok(PdeGrid { spec: spec.clone(), s, t, w })
}

/// Observed spatial order from three solves with `intervals`, `2·intervals`
/// and `4·intervals`, compared on the coarse nodes within `[s_lo, s_hi]` at
/// time `t`.
pub fn spatial_convergence_order(spec: &PdeSpec, t: f64, s_lo: f64, s_hi: f64) -> Result<f64> {
    let grids = [1, 2, 4]
        .iter()
        .map(|m| hms_pde_solve(&PdeSpec { intervals: spec.intervals * m, ..spec.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let k = grids[0].time_index(t);
    let mut e = [0.0f64; 2];
    let mut any = false;
    for (i, &s) in grids[0].s.iter().enumerate() {
        if s < s_lo || s > s_hi {
            continue;
        }
        any = true;
        let (w0, w1, w2) = (grids[0].w[k][i], grids[1].w[k][2 * i], grids[2].w[k][4 * i]);
        e[0] = e[0].max((w0 - w1).abs());
        e[1] = e[1].max((w1 - w2).abs());
    }
    if !any {
        return Err(Error::Empty(format!("no coarse nodes in [{s_lo}, {s_hi}]")));
    }
    if e[1] == 0.0 {
        return Err(invalid("finest refinement did not change the solution"));
    }
    Ok((e[0] / e[1]).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmsRow {
    pub s: f64,
    pub strategy_diff: f64,
    pub scaled_delta_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmsComparison {
    pub t: f64,
    pub gamma: f64,
    pub rows: Vec<HmsRow>,
    /// Pearson correlation of the two columns; `None` when one is constant.
    pub correlation: Option<f64>,
}

impl HmsComparison {
    /// `s,strategy_diff,scaled_delta_u`
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(φ_robust − φ_deep)(t, s)` against `γ·δ^U(t, s)` on `points` equally spaced
/// levels in `[s_lo, s_hi]`. Strategies take `[time, s]` features with time
/// normalised by the maturity.
pub fn compare_to_hms(
    robust: &StrategySpec,
    deep: &StrategySpec,
    pde: &PdeGrid,
    t: f64,
    gamma: f64,
    s_lo: f64,
    s_hi: f64,
    points: usize,
) -> Result<HmsComparison> {
    if points < 2 || !(s_lo < s_hi) {
        return Err(invalid("comparison needs at least two points on a non-empty range"));
    }
    if robust.features != deep.features {
        return Err(Error::Shape("strategies use different features".into()));
    }
    let frac = t / pde.spec.maturity;
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let s = s_lo + (s_hi - s_lo) * i as f64 / (points - 1) as f64;
        let diff = robust.position_at(frac, &[s])?[0] - deep.position_at(frac, &[s])?[0];
        rows.push(HmsRow { s, strategy_diff: diff, scaled_delta_u: gamma * pde.delta_u_at(t, s)? });
    }
    let a: Vec<f64> = rows.iter().map(|r| r.strategy_diff).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.scaled_delta_u).collect();
    Ok(HmsComparison { t, gamma, rows, correlation: pearson(&a, &b).ok() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PdeSpec {
        PdeSpec { intervals: 200, time_steps: 200, ..PdeSpec::call(0.2, 1.0, 18.0 * 5.0 / 255.0) }
    }

    #[test]
    fn terminal_slice_is_zero_and_solution_positive() {
        let g = hms_pde_solve(&small()).unwrap();
        assert!(g.w[g.w.len() - 1].iter().all(|&v| v == 0.0));
        let k = g.time_index(g.spec.maturity / 2.0);
        assert!(g.w_at(g.t[k], 1.0).unwrap() > 0.0);
        assert!(g.w.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let g = hms_pde_solve(&PdeSpec { sigma_source: 0.0, ..small() }).unwrap();
        assert!(g.w.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn homogeneous_bands_leave_a_discrete_solution() {
        // Thomas solve of a known system
        let mut rhs = vec![1.0, 2.0, 3.0];
        let mut scratch = vec![0.0; 3];
        solve_tridiagonal(-1.0, 4.0, -1.0, &mut rhs, &mut scratch).unwrap();
        let x = rhs;
        let back = [4.0 * x[0] - x[1], -x[0] + 4.0 * x[1] - x[2], -x[1] + 4.0 * x[2]];
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b - e).abs() < 1e-14);
        }
    }

    #[test]
    fn too_coarse_or_narrow_grids_are_rejected() {
        assert!(hms_pde_solve(&PdeSpec { intervals: 100, ..small() }).is_err());
        assert!(hms_pde_solve(&PdeSpec { upper: 1.5, ..small() }).is_err());
        assert!(hms_pde_solve(&PdeSpec { time_steps: 3, ..small() }).is_err());
    }

    #[test]
    fn delta_u_matches_interpolated_slope() {
        let g = hms_pde_solve(&small()).unwrap();
        let t = g.spec.maturity / 2.0;
        let h = 1e-3;
        let fd = (g.w_at(t, 1.0 + h).unwrap() - g.w_at(t, 1.0 - h).unwrap()) / (2.0 * h);
        let du = g.delta_u_at(t, 1.0).unwrap();
        assert!((fd - du).abs() < 0.05 * du.abs().max(1e-3), "{fd} vs {du}");
    }
}
