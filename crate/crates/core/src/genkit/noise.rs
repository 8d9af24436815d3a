//! Brownian increments from per-path ChaCha substreams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::grid::TimeGrid;
use crate::error::{invalid, Result};

/// Mixes a base seed with a list of tags into a new 64-bit seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Rng for path `index` of the stream seeded by `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Standard normal draws `z` from the substream of `seed`.
pub fn standard_normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = path_rng(seed, 0);
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Gaussian increments with variance `dt`, laid out `[batch × steps × dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    increments: Vec<f64>,
    batch: usize,
    steps: usize,
    dim: usize,
    dt: f64,
    seed: u64,
}

impl NoiseBatch {
    /// Wraps given increments; used for hand-built noise in tests and examples.
    pub fn from_increments(increments: Vec<f64>, batch: usize, grid: &TimeGrid, dim: usize) -> Result<Self> {
        if batch == 0 || dim == 0 {
            return Err(invalid("noise batch needs at least one path and one dimension"));
        }
        if increments.len() != batch * grid.steps() * dim {
            return Err(invalid(format!(
                "{} increments for {batch} paths × {} steps × {dim}",
                increments.len(),
                grid.steps()
            )));
        }
        crate::error::ensure_finite(&increments, "noise increment")?;
        Ok(Self { increments, batch, steps: grid.steps(), dim, dt: grid.dt(), seed: 0 })
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Increment of path `b`, step `n` (1-based step `n + 1`), channel `c`.
    #[inline]
    pub fn get(&self, b: usize, n: usize, c: usize) -> f64 {
        self.increments[(b * self.steps + n) * self.dim + c]
    }

    /// Column `[batch]` of increments for step `n`, channel `c`.
    pub fn step_column(&self, n: usize, c: usize) -> Vec<f64> {
        (0..self.batch).map(|b| self.get(b, n, c)).collect()
    }

    /// Paths `rows` of this batch, in the given order.
    pub fn select(&self, rows: &[usize]) -> NoiseBatch {
        let w = self.steps * self.dim;
        let mut increments = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            increments.extend_from_slice(&self.increments[r * w..(r + 1) * w]);
        }
        NoiseBatch { increments, batch: rows.len(), steps: self.steps, dim: self.dim, dt: self.dt, seed: self.seed }
    }

    /// Contiguous slice of paths `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> NoiseBatch {
        let w = self.steps * self.dim;
        NoiseBatch {
            increments: self.increments[start * w..(start + len) * w].to_vec(),
            batch: len,
            steps: self.steps,
            dim: self.dim,
            dt: self.dt,
            seed: self.seed,
        }
    }
}

/// Draws `batch` paths of i.i.d. `N(0, dt)` increments. Path `b` uses
/// substream `b` of `seed`, so any sub-batch is reproducible on its own.
pub fn sample_noise(seed: u64, batch: usize, grid: &TimeGrid, dim: usize) -> Result<NoiseBatch> {
    if batch == 0 {
        return Err(invalid("noise batch needs at least one path"));
    }
    if dim == 0 {
        return Err(invalid("noise dimension must be at least 1"));
    }
    let sd = grid.dt().sqrt();
    let w = grid.steps() * dim;
    let mut increments = Vec::with_capacity(batch * w);
    for b in 0..batch {
        let mut rng = path_rng(seed, b as u64);
        increments.extend((0..w).map(|_| sd * rng.sample::<f64, _>(StandardNormal)));
    }
    Ok(NoiseBatch { increments, batch, steps: grid.steps(), dim, dt: grid.dt(), seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_noise() {
        let g = TimeGrid::uniform(0.01, 5).unwrap();
        assert_eq!(sample_noise(7, 10, &g, 2).unwrap(), sample_noise(7, 10, &g, 2).unwrap());
        assert_ne!(sample_noise(7, 10, &g, 2).unwrap(), sample_noise(8, 10, &g, 2).unwrap());
    }

    #[test]
    fn sub_batches_are_prefixes() {
        let g = TimeGrid::uniform(0.01, 4).unwrap();
        let big = sample_noise(3, 20, &g, 1).unwrap();
        let small = sample_noise(3, 5, &g, 1).unwrap();
        assert_eq!(big.slice(0, 5), small);
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(9, &[4, 2]), derive_seed(9, &[4, 2]));
    }
}
