//! Path generators recorded on the tape, so that any scalar of the generated
//! paths can be differentiated with respect to ξ.

use super::grid::TimeGrid;
use super::noise::NoiseBatch;
use super::params::GeneratorParams;
use super::paths::{ChannelRole, PathBatch, PathVar};
use crate::error::{invalid, Error, Result};
use crate::nnkit::{BoundMlp, Gradients, Tape, Tensor, Var};

enum Bound<'t> {
    Bs { sigma: Var<'t>, s0: f64 },
    Heston { kappa: Var<'t>, beta: Var<'t>, sigma: Var<'t>, rho: Var<'t>, s0: f64 },
    Nsde { drift: BoundMlp<'t>, diffusion: BoundMlp<'t>, s0: Var<'t>, train_s0: bool },
}

/// Generator parameters registered on a tape.
pub struct BoundGenerator<'t> {
    tape: &'t Tape,
    bound: Bound<'t>,
    roles: Vec<ChannelRole>,
    noise_dim: usize,
}

impl GeneratorParams {
    /// Registers ξ on `tape`; gradients flow to it when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Result<BoundGenerator<'t>> {
        self.validate()?;
        let leaf = |v: f64| if trainable { tape.param(Tensor::scalar(v)) } else { tape.constant(Tensor::scalar(v)) };
        let bound = match self {
            GeneratorParams::Bs(p) => Bound::Bs { sigma: leaf(p.sigma), s0: p.s0 },
            GeneratorParams::Heston(p) => Bound::Heston {
                kappa: leaf(p.kappa),
                beta: leaf(p.beta),
                sigma: leaf(p.sigma),
                rho: leaf(p.rho),
                s0: p.s0,
            },
            GeneratorParams::Nsde(p) => {
                let s0 = Tensor::row(p.s0.clone());
                Bound::Nsde {
                    drift: p.drift.bind(tape, trainable),
                    diffusion: p.diffusion.bind(tape, trainable),
                    s0: if trainable && p.train_s0 { tape.param(s0) } else { tape.constant(s0) },
                    train_s0: p.train_s0,
                }
            }
        };
        Ok(BoundGenerator { tape, bound, roles: self.roles(), noise_dim: self.noise_dim() })
    }

    /// `n` paths from fresh noise drawn with `seed`.
    pub fn sample(&self, seed: u64, n: usize, grid: &TimeGrid) -> Result<PathBatch> {
        self.generate(&super::noise::sample_noise(seed, n, grid, self.noise_dim())?, grid)
    }

    /// Generates paths without recording gradients. Large batches are
    /// processed in chunks to bound memory.
    pub fn generate(&self, noise: &NoiseBatch, grid: &TimeGrid) -> Result<PathBatch> {
        let chunk = match self {
            GeneratorParams::Nsde(_) => 1024,
            _ => 8192,
        };
        let mut parts = Vec::new();
        let mut start = 0;
        while start < noise.batch() {
            let len = chunk.min(noise.batch() - start);
            let sub = if len == noise.batch() { noise.clone() } else { noise.slice(start, len) };
            let tape = Tape::new();
            let paths = self.bind(&tape, false)?.generate(&sub, grid)?;
            parts.push(paths.to_batch()?);
            start += len;
        }
        if parts.len() == 1 {
            Ok(parts.pop().unwrap())
        } else {
            PathBatch::concat(&parts)
        }
    }
}

impl<'t> BoundGenerator<'t> {
    pub fn roles(&self) -> &[ChannelRole] {
        &self.roles
    }

    /// Trainable leaves in [`GeneratorParams::trainable_tensors`] order.
    pub fn vars(&self) -> Vec<Var<'t>> {
        match &self.bound {
            Bound::Bs { sigma, .. } => vec![*sigma],
            Bound::Heston { kappa, beta, sigma, rho, .. } => vec![*kappa, *beta, *sigma, *rho],
            Bound::Nsde { drift, diffusion, s0, train_s0 } => {
                let mut v = drift.vars();
                v.extend(diffusion.vars());
                if *train_s0 {
                    v.push(*s0);
                }
                v
            }
        }
    }

    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars().into_iter().map(|v| grads.wrt(v)).collect()
    }

    /// Maps noise increments to paths on the tape.
    pub fn generate(&self, noise: &NoiseBatch, grid: &TimeGrid) -> Result<PathVar<'t>> {
        if noise.steps() != grid.steps() {
            return Err(Error::Shape(format!("noise has {} steps, grid has {}", noise.steps(), grid.steps())));
        }
        if (noise.dt() - grid.dt()).abs() > 1e-12 * grid.dt() {
            return Err(invalid("noise was drawn for a different time step"));
        }
        let required = match self.bound {
            Bound::Bs { .. } => 1,
            _ => self.noise_dim,
        };
        let ok = match self.bound {
            Bound::Bs { .. } => noise.dim() >= required,
            _ => noise.dim() == required,
        };
        if !ok {
            return Err(Error::Shape(format!("generator needs noise dimension {required}, got {}", noise.dim())));
        }
        let values = match &self.bound {
            Bound::Bs { sigma, s0 } => self.generate_bs(*sigma, *s0, noise, grid)?,
            Bound::Heston { kappa, beta, sigma, rho, s0 } => {
                self.generate_heston([*kappa, *beta, *sigma, *rho], *s0, noise, grid)?
            }
            Bound::Nsde { drift, diffusion, s0, .. } => self.generate_nsde(drift, diffusion, *s0, noise, grid)?,
        };
        Ok(PathVar { values, steps: grid.steps(), roles: self.roles.clone() })
    }

    fn generate_bs(&self, sigma: Var<'t>, s0: f64, noise: &NoiseBatch, grid: &TimeGrid) -> Result<Var<'t>> {
        let (b, n) = (noise.batch(), grid.steps());
        let mut w = Tensor::zeros(b, n + 1);
        for i in 0..b {
            let mut acc = 0.0;
            for k in 0..n {
                acc += noise.get(i, k, 0);
                w.set(i, k + 1, acc);
            }
        }
        let t = Tensor::row((0..=n).map(|k| grid.time(k) - grid.t0()).collect());
        let w = self.tape.constant(w);
        let t = self.tape.constant(t);
        let half_var = sigma.square().scale(0.5);
        let log_s = w.mul(&sigma)?.sub(&t.mul(&half_var)?)?;
        Ok(log_s.exp().scale(s0))
    }

    fn generate_heston(&self, xi: [Var<'t>; 4], s0: f64, noise: &NoiseBatch, grid: &TimeGrid) -> Result<Var<'t>> {
        let [kappa, beta, sigma, rho] = xi;
        let (b, n, dt) = (noise.batch(), grid.steps(), grid.dt());
        let tape = self.tape;
        let maturity = grid.maturity();
        let rho_bar = rho.square().neg().add_scalar(1.0).relu().sqrt();
        let kappa_dt = kappa.scale(dt);
        let ones = tape.constant(Tensor::filled(b, 1, 1.0));

        let mut log_ret = tape.constant(Tensor::zeros(b, 1));
        let mut v = ones.mul(&beta)?;
        let mut integral = tape.constant(Tensor::zeros(b, 1));
        let mut v_pos = v.relu();

        // S³_n = ∫_0^{t_n} v ds + (v_n − β)(1 − e^{−κ(T − t_n)})/κ + β(T − t_n)
        let vol_swap = |integral: Var<'t>, v_pos: Var<'t>, tau: f64| -> Result<Var<'t>> {
            let decay = kappa.scale(-tau).exp().neg().add_scalar(1.0).div(&kappa)?;
            integral.add(&v_pos.sub(&beta)?.mul(&decay)?)?.add(&beta.scale(tau))
        };

        let mut parts = Vec::with_capacity(3 * (n + 1));
        parts.push(log_ret.exp().scale(s0));
        parts.push(v_pos);
        parts.push(vol_swap(integral, v_pos, maturity - grid.time(0))?);
        for k in 0..n {
            let z1 = tape.constant(Tensor::column(noise.step_column(k, 0)));
            let z2 = tape.constant(Tensor::column(noise.step_column(k, 1)));
            let sqrt_v = v_pos.sqrt();
            let dw2 = z1.mul(&rho)?.add(&z2.mul(&rho_bar)?)?;
            log_ret = log_ret.add(&v_pos.scale(-0.5 * dt))?.add(&sqrt_v.mul(&z1)?)?;
            integral = integral.add(&v_pos.scale(dt))?;
            let mean_rev = beta.sub(&v_pos)?.mul(&kappa_dt)?;
            v = v.add(&mean_rev)?.add(&sqrt_v.mul(&dw2)?.mul(&sigma)?)?;
            v_pos = v.relu();
            let tau = if k + 1 == n { 0.0 } else { maturity - grid.time(k + 1) };
            parts.push(log_ret.exp().scale(s0));
            parts.push(v_pos);
            parts.push(vol_swap(integral, v_pos, tau)?);
        }
        let out = tape.hstack(&parts)?;
        if !out.value().is_finite() {
            return Err(Error::NonFinite("Heston path".into()));
        }
        Ok(out)
    }

    fn generate_nsde(
        &self,
        drift: &BoundMlp<'t>,
        diffusion: &BoundMlp<'t>,
        s0: Var<'t>,
        noise: &NoiseBatch,
        grid: &TimeGrid,
    ) -> Result<Var<'t>> {
        let (b, n, d, dt) = (noise.batch(), grid.steps(), self.noise_dim, grid.dt());
        let tape = self.tape;
        let mut mask = vec![1.0; d];
        mask[0] = 0.0;
        let mask = tape.constant(Tensor::row(mask));
        // sums each row of the d×d diffusion block: (i·d + j) → i
        let row_sum = tape.constant(Tensor::from_fn(d * d, d, |r, c| if r / d == c { 1.0 } else { 0.0 }));

        let mut state = tape.constant(Tensor::zeros(b, d)).add(&s0)?;
        let mut parts = Vec::with_capacity(n + 1);
        parts.push(state);
        for k in 0..n {
            let dw = Tensor::from_fn(b, d * d, |i, col| noise.get(i, k, col % d));
            let mu = drift.forward(state)?.mul(&mask)?;
            let sig = diffusion.forward(state)?.abs();
            let shock = sig.mul(&tape.constant(dw))?.matmul(&row_sum)?;
            state = state.add(&mu.scale(dt))?.add(&shock)?;
            if !state.value().is_finite() {
                return Err(Error::NonFinite(format!("NSDE state at step {}", k + 1)));
            }
            parts.push(state);
        }
        tape.hstack(&parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genkit::{sample_noise, NsdeParams};
    use crate::nnkit::{Dense, MlpParams};

    fn grid() -> TimeGrid {
        TimeGrid::uniform(5.0 / 255.0, 18).unwrap()
    }

    #[test]
    fn bs_with_zero_noise_is_deterministic_drift() {
        let g = grid();
        let noise = NoiseBatch::from_increments(vec![0.0; 18], 1, &g, 1).unwrap();
        let p = GeneratorParams::bs(0.2, 1.0).generate(&noise, &g).unwrap();
        let expected = (-0.02f64 * 90.0 / 255.0).exp();
        assert!((p.get(0, 18, 0) - expected).abs() < 1e-15);
        assert_eq!(p.get(0, 0, 0), 1.0);
    }

    #[test]
    fn bs_zero_vol_is_constant() {
        let g = grid();
        let noise = sample_noise(1, 4, &g, 1).unwrap();
        let p = GeneratorParams::bs(0.0, 1.3).generate(&noise, &g).unwrap();
        assert!(p.values().iter().all(|&v| v == 1.3));
    }

    #[test]
    fn heston_zero_vol_of_vol_keeps_variance() {
        let g = grid();
        let noise = sample_noise(2, 8, &g, 2).unwrap();
        let p = GeneratorParams::heston(1.0, 0.04, 0.0, 0.5, 1.0).generate(&noise, &g).unwrap();
        for b in 0..8 {
            for k in 0..=18 {
                assert_eq!(p.get(b, k, 1), 0.04);
            }
        }
    }

    #[test]
    fn heston_vol_swap_terminal_identity() {
        let g = grid();
        let noise = sample_noise(3, 16, &g, 2).unwrap();
        let p = GeneratorParams::heston(1.0, 0.04, 0.5, -0.7, 1.0).generate(&noise, &g).unwrap();
        for b in 0..16 {
            let riemann: f64 = (0..18).fold(0.0, |acc, k| acc + p.get(b, k, 1) * g.dt());
            assert_eq!(p.get(b, 18, 2), riemann);
            assert_eq!(p.get(b, 0, 0), 1.0);
        }
    }

    #[test]
    fn nsde_zero_nets_are_constant() {
        let g = grid();
        let p = NsdeParams {
            drift: MlpParams::zeros(&[2, 4, 2]).unwrap(),
            diffusion: MlpParams::zeros(&[2, 4, 4]).unwrap(),
            s0: vec![1.0, 0.04],
            train_s0: false,
        };
        let noise = sample_noise(4, 5, &g, 2).unwrap();
        let paths = GeneratorParams::Nsde(p).generate(&noise, &g).unwrap();
        for b in 0..5 {
            for k in 0..=18 {
                assert_eq!(paths.get(b, k, 0), 1.0);
                assert_eq!(paths.get(b, k, 1), 0.04);
            }
        }
    }

    #[test]
    fn nsde_constant_diffusion_matches_hand_rolled_euler() {
        let g = grid();
        let diffusion = MlpParams::from_layers(vec![Dense {
            weight: Tensor::zeros(2, 4),
            bias: Tensor::row(vec![0.2, 0.2, -0.2, 0.2]),
        }])
        .unwrap();
        let drift = MlpParams::from_layers(vec![Dense { weight: Tensor::zeros(2, 2), bias: Tensor::row(vec![5.0, 0.3]) }])
            .unwrap();
        let p = NsdeParams { drift, diffusion, s0: vec![1.0, 0.5], train_s0: false };
        let noise = sample_noise(5, 3, &g, 2).unwrap();
        let paths = GeneratorParams::Nsde(p).generate(&noise, &g).unwrap();
        for b in 0..3 {
            let mut s = [1.0, 0.5];
            for k in 0..18 {
                let (w1, w2) = (noise.get(b, k, 0), noise.get(b, k, 1));
                // drift of the first channel is filtered to zero, diffusion entries enter as |·|
                s[0] = s[0] + 0.0 * g.dt() + (0.2 * w1 + 0.2 * w2);
                s[1] = s[1] + 0.3 * g.dt() + (0.2 * w1 + 0.2 * w2);
                assert!((paths.get(b, k + 1, 0) - s[0]).abs() < 1e-14);
                assert!((paths.get(b, k + 1, 1) - s[1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn noise_dimension_is_checked() {
        let g = grid();
        let noise = sample_noise(1, 2, &g, 1).unwrap();
        assert!(GeneratorParams::heston(1.0, 0.04, 0.2, 0.0, 1.0).generate(&noise, &g).is_err());
        let wrong_grid = TimeGrid::uniform(0.01, 18).unwrap();
        assert!(GeneratorParams::bs(0.2, 1.0).generate(&noise, &wrong_grid).is_err());
    }

    #[test]
    fn chunked_generation_matches_single_pass() {
        let g = TimeGrid::uniform(0.02, 3).unwrap();
        let noise = sample_noise(9, 9000, &g, 1).unwrap();
        let params = GeneratorParams::bs(0.3, 1.0);
        let whole = params.generate(&noise, &g).unwrap();
        let tape = Tape::new();
        let direct = params.bind(&tape, false).unwrap().generate(&noise, &g).unwrap().to_batch().unwrap();
        assert_eq!(whole, direct);
    }
}
