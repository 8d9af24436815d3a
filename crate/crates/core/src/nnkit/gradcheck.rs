//! Central finite-difference checks for tape gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of a directional gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Largest relative error over all probed directions.
    pub max_rel_error: f64,
    pub directions: usize,
}

/// Compares the tape gradient of `f` at `inputs` with central finite
/// differences along `directions` random Gaussian directions.
///
/// The relative error of one probe is `|fd - ad| / max(|fd|, |ad|, floor)`.
pub fn check_gradient<F>(f: F, inputs: &[Tensor], directions: usize, step: f64, floor: f64, seed: u64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.gradient(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let dirs: Vec<Tensor> = inputs
            .iter()
            .map(|x| Tensor::from_fn(x.rows(), x.cols(), |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let shifted = |sign: f64| -> Vec<Tensor> {
            inputs
                .iter()
                .zip(&dirs)
                .map(|(x, d)| {
                    let data = x.data().iter().zip(d.data()).map(|(a, b)| a + sign * step * b).collect();
                    Tensor::new(x.rows(), x.cols(), data).expect("same shape")
                })
                .collect()
        };
        let fd = (eval(&shifted(1.0))? - eval(&shifted(-1.0))?) / (2.0 * step);
        let ad: f64 = analytic
            .iter()
            .zip(&dirs)
            .map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(GradCheck { max_rel_error: worst, directions })
}
