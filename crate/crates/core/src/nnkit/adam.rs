//! Adam optimiser.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Moment accumulators and hyper-parameters of an Adam optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptState {
    /// Zeroed accumulators shaped like `params`, with the usual β₁ = 0.9,
    /// β₂ = 0.999, ε = 1e-8.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, lr: f64) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        let second = first.clone();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first, second }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimiser tracks {} tensors, got {} params and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape("parameter, gradient and moment shapes differ".into()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..gd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let mhat = md[i] / c1;
                let vhat = vd[i] / c2;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::row(vec![1.0, -2.0, 3.5]);
        let before = p.clone();
        let mut opt = OptState::new([&p], 1e-2);
        for _ in 0..10 {
            opt.step(&mut [&mut p], &[Tensor::zeros(1, 3)]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut p = Tensor::row(vec![0.0, 0.0]);
        let mut opt = OptState::new([&p], 1e-2);
        for _ in 0..50 {
            opt.step(&mut [&mut p], &[Tensor::row(vec![2.0, -0.5])]).unwrap();
        }
        assert!(p.data()[0] < 0.0 && p.data()[1] > 0.0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(θ) = (θ - 3)²/2, gradient θ - 3.
        let mut p = Tensor::scalar(0.0);
        let mut opt = OptState::new([&p], 1e-2);
        for _ in 0..5000 {
            let g = Tensor::scalar(p.item() - 3.0);
            opt.step(&mut [&mut p], &[g]).unwrap();
        }
        assert!((p.item() - 3.0).abs() < 1e-3, "θ = {}", p.item());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::row(vec![0.0, 0.0]);
        let mut opt = OptState::new([&p], 1e-2);
        assert!(opt.step(&mut [&mut p], &[Tensor::scalar(1.0)]).is_err());
    }
}
