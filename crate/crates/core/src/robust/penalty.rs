//! Penalties on the generator's deviation from the reference model.
//!
//! Every penalty is a function of the batch means of some per-path features
//! (and, for the HMS penalty, of the current hedge loss), which lets large
//! batches be processed in chunks.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::genkit::{PathBatch, PathVar, TimeGrid};
use crate::nnkit::{GatherMap, GatherSrc, Tape, Tensor, Var};
use crate::sigkit::{augment_rows_map, expected_signature, signature_rows, Augmentation, TruncatedSig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PenaltySpec {
    None,
    /// `(1/(γN)) Σ_n (σ_ref − σ̂_n)²` with `σ̂_n` the annualised cross-sectional
    /// std of the step-`n` log-returns.
    VolMse { gamma: f64, sigma_ref: f64 },
    /// [`PenaltySpec::VolMse`] scaled by the magnitude of the current hedge loss.
    HmsVol { gamma: f64, sigma_ref: f64 },
    /// `SigMMD(selected channels, reference) / γ`.
    SigMmd {
        gamma: f64,
        depth: usize,
        chain: Vec<Augmentation>,
        channels: Vec<usize>,
        /// Expected signature of the reference paths' selected channels.
        reference: TruncatedSig,
    },
}

impl PenaltySpec {
    pub fn vol_mse(gamma: f64, sigma_ref: f64) -> Self {
        PenaltySpec::VolMse { gamma, sigma_ref }
    }

    pub fn hms_vol(gamma: f64, sigma_ref: f64) -> Self {
        PenaltySpec::HmsVol { gamma, sigma_ref }
    }

    /// SigMMD penalty against the selected channels of `reference`.
    pub fn sig_mmd(gamma: f64, depth: usize, chain: Vec<Augmentation>, channels: Vec<usize>, reference: &PathBatch) -> Result<Self> {
        if channels.is_empty() {
            return Err(invalid("SigMMD penalty needs at least one channel"));
        }
        let selected = reference.select_channels(&channels)?;
        let reference = expected_signature(&selected, depth, &chain)?;
        let spec = PenaltySpec::SigMmd { gamma, depth, chain, channels, reference };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            PenaltySpec::None => None,
            PenaltySpec::VolMse { gamma, .. } | PenaltySpec::HmsVol { gamma, .. } | PenaltySpec::SigMmd { gamma, .. } => {
                Some(*gamma)
            }
        }
    }

    /// Same penalty with another `γ`.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            PenaltySpec::None => {}
            PenaltySpec::VolMse { gamma: g, .. } | PenaltySpec::HmsVol { gamma: g, .. } | PenaltySpec::SigMmd { gamma: g, .. } => {
                *g = gamma
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gamma() {
            if !(g > 0.0 && g.is_finite()) {
                return Err(invalid(format!("gamma must be positive, got {g}")));
            }
        }
        match self {
            PenaltySpec::VolMse { sigma_ref, .. } | PenaltySpec::HmsVol { sigma_ref, .. } => {
                if !(*sigma_ref > 0.0 && sigma_ref.is_finite()) {
                    return Err(invalid(format!("reference volatility must be positive, got {sigma_ref}")));
                }
            }
            PenaltySpec::SigMmd { depth, channels, reference, .. } => {
                if reference.depth() != *depth {
                    return Err(invalid("reference signature depth differs from the penalty depth"));
                }
                if channels.is_empty() {
                    return Err(invalid("SigMMD penalty needs at least one channel"));
                }
            }
            PenaltySpec::None => {}
        }
        Ok(())
    }

    /// Per-path features `[B × k]` whose batch mean determines the penalty;
    /// `None` for the zero penalty.
    pub fn features<'t>(&self, paths: &PathVar<'t>) -> Result<Option<Var<'t>>> {
        let (b, steps) = (paths.batch(), paths.steps);
        let width = paths.points() * paths.dims();
        match self {
            PenaltySpec::None => Ok(None),
            PenaltySpec::VolMse { .. } | PenaltySpec::HmsVol { .. } => {
                let c = paths.asset_channel()?;
                let map = |shift: usize| {
                    let src = (0..b)
                        .flat_map(|i| (0..steps).map(move |n| GatherSrc::Input(i * width + paths.col(n + shift, c))))
                        .collect();
                    Rc::new(GatherMap { rows: b, cols: steps, src })
                };
                let (next, prev) = (paths.values.gather(map(1))?, paths.values.gather(map(0))?);
                if next.value().data().iter().chain(prev.value().data()).any(|&v| v <= 0.0) {
                    return Err(invalid("volatility penalty needs a strictly positive asset channel"));
                }
                let r = next.div(&prev)?.ln();
                Ok(Some(paths.values.tape().hstack(&[r, r.square()])?))
            }
            PenaltySpec::SigMmd { depth, chain, channels, .. } => {
                let (n, d, map) = augment_rows_map(b, paths.points(), paths.dims(), channels, chain)?;
                let aug = paths.values.gather(Rc::new(map))?;
                Ok(Some(signature_rows(aug, n, d, *depth)?))
            }
        }
    }

    /// Penalty from the feature means `[1 × k]` of a batch of `batch` paths
    /// and the current hedge loss.
    pub fn from_means<'t>(&self, means: Var<'t>, loss: Var<'t>, batch: usize, grid: &TimeGrid) -> Result<Var<'t>> {
        let tape = means.tape();
        match self {
            PenaltySpec::None => Ok(tape.scalar(0.0)),
            PenaltySpec::VolMse { gamma, sigma_ref } | PenaltySpec::HmsVol { gamma, sigma_ref } => {
                if batch < 2 {
                    return Err(invalid("volatility penalty needs at least two paths"));
                }
                let n = grid.steps();
                let idx: Vec<usize> = (0..n).collect();
                let m1 = means.select_cols(&idx)?;
                let m2 = means.select_cols(&idx.iter().map(|i| i + n).collect::<Vec<_>>())?;
                let var = m2.sub(&m1.square())?.scale(batch as f64 / (batch - 1) as f64);
                let sigma = var.relu().scale(1.0 / grid.dt()).sqrt();
                let mse = sigma.add_scalar(-sigma_ref).square().mean().scale(1.0 / gamma);
                match self {
                    PenaltySpec::HmsVol { .. } => mse.mul(&loss.abs()),
                    _ => Ok(mse),
                }
            }
            PenaltySpec::SigMmd { gamma, reference, .. } => {
                if means.shape().1 != reference.coeffs().len() {
                    return Err(Error::Shape("reference signature has a different shape".into()));
                }
                let mut target = reference.coeffs().to_vec();
                // level 0 is 1 on both sides and is excluded from the norm
                target[0] = means.value().data()[0];
                Ok(means.sub(&tape.constant(Tensor::row(target)))?.square().sum().scale(1.0 / gamma))
            }
        }
    }

    /// Penalty of a batch on the tape.
    pub fn on_tape<'t>(&self, paths: &PathVar<'t>, loss: Var<'t>, grid: &TimeGrid) -> Result<Var<'t>> {
        match self.features(paths)? {
            None => Ok(paths.values.tape().scalar(0.0)),
            Some(f) => self.from_means(f.mean_rows(), loss, paths.batch(), grid),
        }
    }

    /// Penalty of a plain batch; `loss` only matters for the HMS penalty.
    pub fn value(&self, batch: &PathBatch, loss: f64, grid: &TimeGrid) -> Result<f64> {
        self.validate()?;
        if batch.steps() != grid.steps() {
            return Err(Error::Shape(format!("batch has {} steps, grid has {}", batch.steps(), grid.steps())));
        }
        let tape = Tape::new();
        let paths = PathVar::constant(&tape, batch);
        let v = self.on_tape(&paths, tape.scalar(loss), grid)?.item();
        if !v.is_finite() {
            return Err(Error::NonFinite("penalty value".into()));
        }
        Ok(v)
    }
}

/// Volatility-MSE penalty of a batch.
pub fn penalty_vol_mse(batch: &PathBatch, gamma: f64, sigma_ref: f64, grid: &TimeGrid) -> Result<f64> {
    PenaltySpec::vol_mse(gamma, sigma_ref).value(batch, 0.0, grid)
}

/// HMS penalty of a batch given the current hedge loss.
pub fn penalty_hms(batch: &PathBatch, hedge_loss: f64, gamma: f64, sigma_ref: f64, grid: &TimeGrid) -> Result<f64> {
    PenaltySpec::hms_vol(gamma, sigma_ref).value(batch, hedge_loss, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::sample_std;
    use crate::genkit::{sample_noise, GeneratorParams};

    fn grid() -> TimeGrid {
        TimeGrid::uniform(5.0 / 255.0, 6).unwrap()
    }

    fn bs_batch(sigma: f64, n: usize, seed: u64) -> PathBatch {
        let g = grid();
        GeneratorParams::bs(sigma, 1.0).generate(&sample_noise(seed, n, &g, 1).unwrap(), &g).unwrap()
    }

    #[test]
    fn vol_mse_matches_direct_formula() {
        let batch = bs_batch(0.3, 50, 1);
        let g = grid();
        let mut expect = 0.0;
        for n in 0..6 {
            let r: Vec<f64> = (0..50).map(|b| (batch.get(b, n + 1, 0) / batch.get(b, n, 0)).ln()).collect();
            let s = sample_std(&r) / g.dt().sqrt();
            expect += (0.2 - s).powi(2);
        }
        expect /= 6.0 * 4.0;
        let got = penalty_vol_mse(&batch, 4.0, 0.2, &g).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect.max(1.0), "{got} vs {expect}");
        assert!((penalty_vol_mse(&batch, 8.0, 0.2, &g).unwrap() - got / 2.0).abs() < 1e-15);
    }

    #[test]
    fn hms_scales_with_loss() {
        let batch = bs_batch(0.3, 50, 2);
        let g = grid();
        assert_eq!(penalty_hms(&batch, 0.0, 1.0, 0.2, &g).unwrap(), 0.0);
        let one = penalty_hms(&batch, 0.05, 1.0, 0.2, &g).unwrap();
        let two = penalty_hms(&batch, 0.1, 1.0, 0.2, &g).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-15);
    }

    #[test]
    fn sig_mmd_is_zero_against_itself() {
        let batch = bs_batch(0.2, 30, 3);
        let p = PenaltySpec::sig_mmd(1.0, 2, vec![Augmentation::LeadLag, Augmentation::Time], vec![0], &batch).unwrap();
        assert!(p.value(&batch, 0.0, &grid()).unwrap() < 1e-28);
        let other = bs_batch(0.3, 30, 4);
        let base = p.value(&other, 0.0, &grid()).unwrap();
        assert!(base > 0.0);
        let far = p.with_gamma(1e12).value(&other, 0.0, &grid()).unwrap();
        assert!(far < 1e-9 * base);
    }

    #[test]
    fn non_positive_asset_is_rejected() {
        let batch = PathBatch::new(vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0], 1, 6, vec![crate::genkit::ChannelRole::Asset]).unwrap();
        let b2 = PathBatch::concat(&[batch.clone(), batch]).unwrap();
        assert!(penalty_vol_mse(&b2, 1.0, 0.2, &grid()).is_err());
    }

    #[test]
    fn bad_gamma_is_rejected() {
        assert!(PenaltySpec::vol_mse(0.0, 0.2).validate().is_err());
        assert!(PenaltySpec::vol_mse(1.0, -0.2).validate().is_err());
    }
}
