//! Path augmentations applied before taking signatures.
//!
//! An augmentation chain is compiled into a [`GatherSrc`] map from the base
//! path (row-major `points × dim`) to the augmented path, so the same map
//! serves plain evaluation and the differentiable tape.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::nnkit::GatherSrc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Augmentation {
    /// Appends the normalised time `k / (n - 1)` as a channel.
    Time,
    /// Prepends a zero basepoint and appends a 0/1 visibility indicator.
    Visibility,
    /// Interleaves the path with its lag on a doubled grid; doubles the channels.
    LeadLag,
}

impl Augmentation {
    pub fn name(self) -> &'static str {
        match self {
            Augmentation::Time => "time",
            Augmentation::Visibility => "visibility",
            Augmentation::LeadLag => "lead-lag",
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "time" => Ok(Augmentation::Time),
            "visibility" => Ok(Augmentation::Visibility),
            "lead-lag" | "leadlag" | "lead_lag" => Ok(Augmentation::LeadLag),
            other => Err(invalid(format!("unknown augmentation '{other}'"))),
        }
    }
}

/// Parses a list of augmentation names.
pub fn parse_chain<S: AsRef<str>>(names: &[S]) -> Result<Vec<Augmentation>> {
    names.iter().map(|n| n.as_ref().parse()).collect()
}

/// Shape of a path after applying `chain` to an `points × dim` path.
pub fn augmented_shape(points: usize, dim: usize, chain: &[Augmentation]) -> (usize, usize) {
    chain.iter().fold((points, dim), |(n, d), a| match a {
        Augmentation::Time => (n, d + 1),
        Augmentation::Visibility => (n + 1, d + 1),
        Augmentation::LeadLag => (2 * n - 1, 2 * d),
    })
}

/// Index map realising `chain` on a single `points × dim` path.
///
/// Entry `k` of the result is the source of flat element `k` of the augmented
/// path; inputs are flat indices into the base path.
pub fn augmentation_map(points: usize, dim: usize, chain: &[Augmentation]) -> Result<(usize, usize, Vec<GatherSrc>)> {
    if points < 2 {
        return Err(invalid(format!("a path needs at least 2 points, got {points}")));
    }
    if dim == 0 {
        return Err(invalid("a path needs at least one channel"));
    }
    let mut n = points;
    let mut d = dim;
    let mut src: Vec<GatherSrc> = (0..n * d).map(GatherSrc::Input).collect();
    for aug in chain {
        match aug {
            Augmentation::Time => {
                let mut next = Vec::with_capacity(n * (d + 1));
                for k in 0..n {
                    next.extend_from_slice(&src[k * d..(k + 1) * d]);
                    next.push(GatherSrc::Const(k as f64 / (n - 1) as f64));
                }
                src = next;
                d += 1;
            }
            Augmentation::Visibility => {
                let mut next = Vec::with_capacity((n + 1) * (d + 1));
                next.extend(std::iter::repeat(GatherSrc::Const(0.0)).take(d + 1));
                for k in 0..n {
                    next.extend_from_slice(&src[k * d..(k + 1) * d]);
                    next.push(GatherSrc::Const(1.0));
                }
                src = next;
                n += 1;
                d += 1;
            }
            Augmentation::LeadLag => {
                let mut next = Vec::with_capacity((2 * n - 1) * 2 * d);
                let row = |k: usize| &src[k * d..(k + 1) * d];
                for k in 0..n {
                    next.extend_from_slice(row(k));
                    next.extend_from_slice(row(k));
                    if k + 1 < n {
                        next.extend_from_slice(row(k + 1));
                        next.extend_from_slice(row(k));
                    }
                }
                src = next;
                n = 2 * n - 1;
                d *= 2;
            }
        }
    }
    Ok((n, d, src))
}

/// A path after augmentation, stored row-major as `num_points × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPath {
    values: Vec<f64>,
    num_points: usize,
    dim: usize,
    provenance: Vec<Augmentation>,
}

impl AugmentedPath {
    /// Wraps raw path samples without augmentation.
    pub fn from_values(values: Vec<f64>, dim: usize) -> Result<Self> {
        augment(&values, dim, &[])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &[Augmentation] {
        &self.provenance
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

/// Applies `chain` left to right to the row-major path `values` with `dim` channels.
pub fn augment(values: &[f64], dim: usize, chain: &[Augmentation]) -> Result<AugmentedPath> {
    if dim == 0 || values.len() % dim != 0 {
        return Err(invalid(format!("{} values do not form rows of {dim} channels", values.len())));
    }
    ensure_finite(values, "path value")?;
    let points = values.len() / dim;
    let (n, d, map) = augmentation_map(points, dim, chain)?;
    let out = apply_map(values, &map);
    Ok(AugmentedPath { values: out, num_points: n, dim: d, provenance: chain.to_vec() })
}

pub(crate) fn apply_map(values: &[f64], map: &[GatherSrc]) -> Vec<f64> {
    map.iter()
        .map(|s| match *s {
            GatherSrc::Input(i) => values[i],
            GatherSrc::Const(c) => c,
        })
        .collect()
}
