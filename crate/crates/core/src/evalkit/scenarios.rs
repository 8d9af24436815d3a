//! Scenario sets: the "true" models a fixed strategy is tested against.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::stats::sample_std;
use crate::error::{invalid, Error, Result};
use crate::genkit::{derive_seed, read_params_csv, standard_normals, GeneratorParams, HestonParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioProvenance {
    BsInverse,
    HestonDifferenced,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub params: Vec<GeneratorParams>,
    pub provenance: ScenarioProvenance,
    /// Candidates dropped because they left the parameter set after clamping.
    pub dropped: usize,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Scenarios read verbatim from a parameter file.
    pub fn from_file(input: impl Read) -> Result<Self> {
        let params = read_params_csv(input)?;
        for p in &params {
            p.validate()?;
        }
        Ok(Self { params, provenance: ScenarioProvenance::File, dropped: 0 })
    }
}

/// The volatility that makes the standardised draws `z` reproduce the realised
/// volatility `sigma_target`: `σ_target / std(z)`.
pub fn inverse_calibrate_bs(sigma_target: f64, z: &[f64]) -> Result<f64> {
    if z.len() < 2 {
        return Err(invalid("inverse calibration needs at least two draws"));
    }
    let s = sample_std(z);
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid(format!("sample std of the draws is {s}")));
    }
    Ok(sigma_target / s)
}

/// Draws for scenario `m` of [`build_bs_scenarios`].
pub fn bs_scenario_draws(seed: u64, m: usize, n_obs: usize) -> Vec<f64> {
    standard_normals(derive_seed(seed, &[m as u64]), n_obs)
}

/// `m` Black-Scholes scenarios, each inverse calibrated to `sigma_ref` on
/// `n_obs` fresh standard normal draws.
pub fn build_bs_scenarios(sigma_ref: f64, s0: f64, n_obs: usize, m: usize, seed: u64) -> Result<ScenarioSet> {
    if n_obs < 2 || m == 0 {
        return Err(invalid("BS scenarios need n_obs >= 2 and at least one scenario"));
    }
    let params = (0..m)
        .map(|i| Ok(GeneratorParams::bs(inverse_calibrate_bs(sigma_ref, &bs_scenario_draws(seed, i, n_obs))?, s0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioSet { params, provenance: ScenarioProvenance::BsInverse, dropped: 0 })
}

/// Reference plus lagged parameter differences: for each row `m > lag` and
/// each lag `l ≤ lags`, `ξ_ref + (ξ_m − ξ_{m−l})`, with `ρ ∧ 1` and `|σ|`
/// applied afterwards. Candidates still outside the parameter set are dropped.
pub fn build_heston_scenarios(reference: &GeneratorParams, daily: &[GeneratorParams], lags: usize) -> Result<ScenarioSet> {
    let GeneratorParams::Heston(r) = reference else {
        return Err(invalid("Heston scenarios need a Heston reference"));
    };
    reference.validate()?;
    if lags == 0 || lags > 10 {
        return Err(invalid(format!("lags must lie in 1..=10, got {lags}")));
    }
    if daily.len() <= lags {
        return Err(invalid(format!("{} daily rows do not cover a lag of {lags}", daily.len())));
    }
    let rows = daily
        .iter()
        .map(|p| match p {
            GeneratorParams::Heston(h) => Ok(h),
            other => Err(Error::Parse(format!("expected Heston rows, found {}", other.variant()))),
        })
        .collect::<Result<Vec<&HestonParams>>>()?;
    let mut params = Vec::new();
    let mut dropped = 0;
    for l in 1..=lags {
        for m in l..rows.len() {
            let (a, b) = (rows[m], rows[m - l]);
            let candidate = GeneratorParams::heston(
                r.kappa + (a.kappa - b.kappa),
                r.beta + (a.beta - b.beta),
                (r.sigma + (a.sigma - b.sigma)).abs(),
                (r.rho + (a.rho - b.rho)).min(1.0),
                r.s0,
            );
            if candidate.validate().is_ok() {
                params.push(candidate);
            } else {
                dropped += 1;
            }
        }
    }
    Ok(ScenarioSet { params, provenance: ScenarioProvenance::HestonDifferenced, dropped })
}

/// Reads the daily parameter file and builds the Heston scenario set.
pub fn build_heston_scenarios_from_file(reference: &GeneratorParams, input: impl Read, lags: usize) -> Result<ScenarioSet> {
    build_heston_scenarios(reference, &read_params_csv(input)?, lags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_calibration_formula() {
        let z = [1.0, -1.0];
        // unbiased std of ±1 is √2
        assert!((inverse_calibrate_bs(0.2, &z).unwrap() - 0.2 / 2f64.sqrt()).abs() < 1e-15);
        assert!(inverse_calibrate_bs(0.2, &[1.0, 1.0]).is_err());
        assert!(inverse_calibrate_bs(0.2, &[1.0]).is_err());
    }

    #[test]
    fn single_bs_scenario_is_deterministic() {
        let a = build_bs_scenarios(0.2, 1.0, 45, 1, 3).unwrap();
        assert_eq!(a, build_bs_scenarios(0.2, 1.0, 45, 1, 3).unwrap());
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn constant_daily_file_gives_reference() {
        let r = GeneratorParams::heston(1.0, 0.04, 0.2, 0.8, 1.0);
        let daily = vec![GeneratorParams::heston(2.0, 0.05, 0.3, -0.1, 1.0); 12];
        let s = build_heston_scenarios(&r, &daily, 10).unwrap();
        assert_eq!(s.len(), (1..=10).map(|l| 12 - l).sum::<usize>());
        assert!(s.params.iter().all(|p| *p == r));
    }

    #[test]
    fn two_rows_one_lag() {
        let r = GeneratorParams::heston(1.0, 0.25, 0.5, 0.75, 1.0);
        let daily = vec![GeneratorParams::heston(2.0, 0.5, 0.75, 0.0, 1.0), GeneratorParams::heston(2.5, 0.75, 0.5, 0.125, 1.0)];
        let s = build_heston_scenarios(&r, &daily, 1).unwrap();
        assert_eq!(s.params, vec![GeneratorParams::heston(1.5, 0.5, 0.25, 0.875, 1.0)]);
        let r = GeneratorParams::heston(1.0, 0.25, 0.25, 0.75, 1.0);
        // σ → |σ| and ρ ∧ 1
        let daily = vec![GeneratorParams::heston(2.0, 0.5, 0.75, 0.0, 1.0), GeneratorParams::heston(2.0, 0.5, 0.25, 0.5, 1.0)];
        let s = build_heston_scenarios(&r, &daily, 1).unwrap();
        assert_eq!(s.params, vec![GeneratorParams::heston(1.0, 0.25, 0.25, 1.0, 1.0)]);
    }

    #[test]
    fn infeasible_candidates_are_counted() {
        let r = GeneratorParams::heston(1.0, 0.04, 0.2, 0.8, 1.0);
        let daily = vec![GeneratorParams::heston(3.0, 0.05, 0.3, 0.0, 1.0), GeneratorParams::heston(1.0, 0.05, 0.3, 0.0, 1.0)];
        let s = build_heston_scenarios(&r, &daily, 1).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.dropped, 1);
        assert!(build_heston_scenarios(&r, &daily, 2).is_err());
    }
}
