use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::nnkit::{Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelRole {
    Asset,
    Variance,
    VolSwap,
    Hidden,
}

impl ChannelRole {
    /// Whether the channel can be traded; the others are observable only.
    pub fn tradable(self) -> bool {
        matches!(self, ChannelRole::Asset | ChannelRole::VolSwap)
    }
}

/// A batch of discretised paths, `[batch × (steps + 1) × dims]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    values: Vec<f64>,
    batch: usize,
    steps: usize,
    roles: Vec<ChannelRole>,
}

/// JSON sidecar of the binary path export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBatchHeader {
    pub batch: usize,
    pub steps: usize,
    pub dims: usize,
    pub roles: Vec<ChannelRole>,
}

impl PathBatch {
    pub fn new(values: Vec<f64>, batch: usize, steps: usize, roles: Vec<ChannelRole>) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Empty("path batch".into()));
        }
        if roles.is_empty() || steps == 0 {
            return Err(invalid("paths need at least one channel and one step"));
        }
        if values.len() != batch * (steps + 1) * roles.len() {
            return Err(Error::Shape(format!(
                "{} values for {batch} paths × {} points × {} channels",
                values.len(),
                steps + 1,
                roles.len()
            )));
        }
        ensure_finite(&values, "path value")?;
        Ok(Self { values, batch, steps, roles })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn points(&self) -> usize {
        self.steps + 1
    }

    pub fn dims(&self) -> usize {
        self.roles.len()
    }

    pub fn roles(&self) -> &[ChannelRole] {
        &self.roles
    }

    pub fn tradable_mask(&self) -> Vec<bool> {
        self.roles.iter().map(|r| r.tradable()).collect()
    }

    /// Index of the first asset channel.
    pub fn asset_channel(&self) -> Result<usize> {
        self.roles
            .iter()
            .position(|r| *r == ChannelRole::Asset)
            .ok_or_else(|| invalid("path batch has no asset channel"))
    }

    #[inline]
    pub fn get(&self, b: usize, n: usize, c: usize) -> f64 {
        let d = self.roles.len();
        self.values[(b * (self.steps + 1) + n) * d + c]
    }

    /// One path as a row-major `points × dims` slice.
    pub fn path(&self, b: usize) -> &[f64] {
        let w = (self.steps + 1) * self.roles.len();
        &self.values[b * w..(b + 1) * w]
    }

    /// Values of channel `c` at point `n` across the batch.
    pub fn slice_at(&self, n: usize, c: usize) -> Vec<f64> {
        (0..self.batch).map(|b| self.get(b, n, c)).collect()
    }

    pub fn terminal(&self, c: usize) -> Vec<f64> {
        self.slice_at(self.steps, c)
    }

    /// Keeps only `channels`, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<PathBatch> {
        let d = self.dims();
        if channels.is_empty() {
            return Err(invalid("empty channel selection"));
        }
        if let Some(c) = channels.iter().find(|&&c| c >= d) {
            return Err(Error::Shape(format!("channel {c} of a {d}-channel batch")));
        }
        let mut values = Vec::with_capacity(self.batch * self.points() * channels.len());
        for row in self.values.chunks(d) {
            values.extend(channels.iter().map(|&c| row[c]));
        }
        let roles = channels.iter().map(|&c| self.roles[c]).collect();
        PathBatch::new(values, self.batch, self.steps, roles)
    }

    /// Paths `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<PathBatch> {
        if len == 0 || start + len > self.batch {
            return Err(invalid(format!("paths {start}..{} of {}", start + len, self.batch)));
        }
        let w = self.points() * self.dims();
        PathBatch::new(self.values[start * w..(start + len) * w].to_vec(), len, self.steps, self.roles.clone())
    }

    /// Concatenates batches with identical layout.
    pub fn concat(parts: &[PathBatch]) -> Result<PathBatch> {
        let first = parts.first().ok_or_else(|| Error::Empty("path batch list".into()))?;
        let mut values = Vec::new();
        let mut batch = 0;
        for p in parts {
            if p.steps != first.steps || p.roles != first.roles {
                return Err(Error::Shape("concatenating batches of different layout".into()));
            }
            values.extend_from_slice(&p.values);
            batch += p.batch;
        }
        PathBatch::new(values, batch, first.steps, first.roles.clone())
    }

    /// Values as a `[batch × points·dims]` tensor, one path per row.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.batch, self.points() * self.dims(), self.values.clone()).expect("consistent layout")
    }

    pub fn header(&self) -> PathBatchHeader {
        PathBatchHeader { batch: self.batch, steps: self.steps, dims: self.dims(), roles: self.roles.clone() }
    }

    /// Writes little-endian `f64` values to `data` and the header to `sidecar`.
    pub fn write_binary(&self, data: &mut impl Write, sidecar: &mut impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        data.write_all(&buf)?;
        serde_json::to_writer_pretty(sidecar, &self.header())?;
        Ok(())
    }

    pub fn read_binary(data: &mut impl Read, sidecar: &mut impl Read) -> Result<PathBatch> {
        let header: PathBatchHeader = serde_json::from_reader(sidecar)?;
        if header.roles.len() != header.dims {
            return Err(Error::Parse(format!("{} roles for {} dims", header.roles.len(), header.dims)));
        }
        let mut bytes = Vec::new();
        data.read_to_end(&mut bytes)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Parse("path data is not a whole number of f64 values".into()));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        PathBatch::new(values, header.batch, header.steps, header.roles)
    }

    /// Saves to `path` (binary) and `path` with a `.json` extension (sidecar).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut data = fs::File::create(path)?;
        let mut side = fs::File::create(path.with_extension("json"))?;
        self.write_binary(&mut data, &mut side)
    }

    pub fn load(path: &Path) -> Result<PathBatch> {
        let mut data = fs::File::open(path)?;
        let mut side = fs::File::open(path.with_extension("json"))?;
        PathBatch::read_binary(&mut data, &mut side)
    }
}

/// Paths living on a tape, one path per row, `points × dims` within a row.
#[derive(Debug, Clone)]
pub struct PathVar<'t> {
    pub values: Var<'t>,
    pub steps: usize,
    pub roles: Vec<ChannelRole>,
}

impl<'t> PathVar<'t> {
    pub fn batch(&self) -> usize {
        self.values.shape().0
    }

    pub fn points(&self) -> usize {
        self.steps + 1
    }

    pub fn dims(&self) -> usize {
        self.roles.len()
    }

    pub fn asset_channel(&self) -> Result<usize> {
        self.roles
            .iter()
            .position(|r| *r == ChannelRole::Asset)
            .ok_or_else(|| invalid("paths have no asset channel"))
    }

    /// Flat column index of point `n`, channel `c` within a row.
    pub fn col(&self, n: usize, c: usize) -> usize {
        n * self.roles.len() + c
    }

    pub fn to_batch(&self) -> Result<PathBatch> {
        PathBatch::new(self.values.value().data().to_vec(), self.batch(), self.steps, self.roles.clone())
    }

    /// Places a stored batch on the tape as a constant.
    pub fn constant(tape: &'t crate::nnkit::Tape, batch: &PathBatch) -> PathVar<'t> {
        PathVar { values: tape.constant(batch.to_tensor()), steps: batch.steps(), roles: batch.roles().to_vec() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PathBatch {
        let values = (0..2 * 3 * 2).map(|i| 1.0 + i as f64).collect();
        PathBatch::new(values, 2, 2, vec![ChannelRole::Asset, ChannelRole::Variance]).unwrap()
    }

    #[test]
    fn indexing_is_point_major() {
        let p = sample();
        assert_eq!(p.get(0, 0, 1), 2.0);
        assert_eq!(p.get(1, 2, 0), 11.0);
        assert_eq!(p.terminal(0), vec![5.0, 11.0]);
        assert_eq!(p.tradable_mask(), vec![true, false]);
    }

    #[test]
    fn binary_round_trip() {
        let p = sample();
        let (mut data, mut side) = (Vec::new(), Vec::new());
        p.write_binary(&mut data, &mut side).unwrap();
        assert_eq!(data.len(), 12 * 8);
        let back = PathBatch::read_binary(&mut data.as_slice(), &mut side.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn channel_selection() {
        let p = sample().select_channels(&[1]).unwrap();
        assert_eq!(p.values(), &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
        assert_eq!(p.roles(), &[ChannelRole::Variance]);
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(PathBatch::new(vec![1.0, f64::NAN], 1, 1, vec![ChannelRole::Asset]).is_err());
        assert!(PathBatch::new(vec![1.0; 3], 1, 1, vec![ChannelRole::Asset]).is_err());
    }
}
