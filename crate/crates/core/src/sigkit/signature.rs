//! Truncated signatures of piecewise-linear paths.
//!
//! Coefficients are stored level by level, level 0 first, and words within a
//! level in lexicographic order, so level `k` occupies `dim^k` slots.

use serde::{Deserialize, Serialize};

use super::augment::{AugmentedPath, Augmentation};
use crate::error::{invalid, Error, Result};

/// Number of coefficients of a depth-`depth` signature over `dim` channels, level 0 included.
pub fn sig_len(dim: usize, depth: usize) -> usize {
    (0..=depth).map(|k| dim.pow(k as u32)).sum()
}

/// Start offset of each level, plus the total length as the last entry.
pub(crate) fn level_offsets(dim: usize, depth: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(depth + 2);
    let mut acc = 0;
    for k in 0..=depth {
        out.push(acc);
        acc += dim.pow(k as u32);
    }
    out.push(acc);
    out
}

pub(crate) fn check_depth(depth: usize) -> Result<()> {
    if depth == 0 {
        return Err(invalid("signature depth must be at least 1"));
    }
    Ok(())
}

/// Truncated tensor exponential of a single increment.
pub(crate) fn exp_increment(delta: &[f64], depth: usize, offsets: &[usize], out: &mut [f64]) {
    let d = delta.len();
    out[0] = 1.0;
    for k in 1..=depth {
        let (prev, cur) = out.split_at_mut(offsets[k]);
        let prev = &prev[offsets[k - 1]..];
        let inv_k = 1.0 / k as f64;
        for (u, &p) in prev.iter().enumerate() {
            let row = &mut cur[u * d..(u + 1) * d];
            for (slot, &x) in row.iter_mut().zip(delta) {
                *slot = p * x * inv_k;
            }
        }
    }
}

/// In place `s ← s ⊗ e`, truncated, for group-like `e` with `e_0 = 1`.
///
/// Levels are updated from the top down so lower levels are still the old
/// values when they are read.
pub(crate) fn chen_update(s: &mut [f64], e: &[f64], dim: usize, depth: usize, offsets: &[usize]) {
    for k in (1..=depth).rev() {
        for j in 1..=k {
            let a = k - j;
            let width_j = dim.pow(j as u32);
            let (lo, hi) = s.split_at_mut(offsets[k]);
            let src = &lo[offsets[a]..offsets[a + 1]];
            let ej = &e[offsets[j]..offsets[j + 1]];
            let dst = &mut hi[..offsets[k + 1] - offsets[k]];
            for (u, &su) in src.iter().enumerate() {
                if su == 0.0 {
                    continue;
                }
                let row = &mut dst[u * width_j..(u + 1) * width_j];
                for (slot, &ev) in row.iter_mut().zip(ej) {
                    *slot += su * ev;
                }
            }
        }
    }
}

/// Signature coefficients of `values` (row-major `points × dim`) into `out`.
pub(crate) fn signature_into(values: &[f64], dim: usize, depth: usize, offsets: &[usize], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    out[0] = 1.0;
    let points = values.len() / dim;
    let mut e = vec![0.0; out.len()];
    let mut delta = vec![0.0; dim];
    for k in 1..points {
        for c in 0..dim {
            delta[c] = values[k * dim + c] - values[(k - 1) * dim + c];
        }
        exp_increment(&delta, depth, offsets, &mut e);
        chen_update(out, &e, dim, depth, offsets);
    }
}

/// A truncated signature with its level structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSig {
    depth: usize,
    dim: usize,
    coeffs: Vec<f64>,
}

impl TruncatedSig {
    pub fn new(depth: usize, dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("signature over zero channels"));
        }
        if coeffs.len() != sig_len(dim, depth) {
            return Err(Error::Shape(format!(
                "depth {depth} signature over {dim} channels has {} coefficients, got {}",
                sig_len(dim, depth),
                coeffs.len()
            )));
        }
        Ok(Self { depth, dim, coeffs })
    }

    /// The signature of a constant path: 1 at level 0, zero elsewhere.
    pub fn identity(depth: usize, dim: usize) -> Self {
        let mut coeffs = vec![0.0; sig_len(dim, depth)];
        coeffs[0] = 1.0;
        Self { depth, dim, coeffs }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let offsets = level_offsets(self.dim, self.depth);
        &self.coeffs[offsets[k]..offsets[k + 1]]
    }

    /// Coefficient of the word `i_1 … i_k` (zero-based letters).
    pub fn word(&self, letters: &[usize]) -> f64 {
        let offsets = level_offsets(self.dim, self.depth);
        let idx = letters.iter().fold(0, |acc, &l| acc * self.dim + l);
        self.coeffs[offsets[letters.len()] + idx]
    }

    /// Truncated tensor product `self ⊗ other`.
    pub fn product(&self, other: &TruncatedSig) -> Result<TruncatedSig> {
        if self.dim != other.dim || self.depth != other.depth {
            return Err(Error::Shape("signatures of different shape".into()));
        }
        let (d, m) = (self.dim, self.depth);
        let offsets = level_offsets(d, m);
        let mut out = vec![0.0; self.coeffs.len()];
        for k in 0..=m {
            for a in 0..=k {
                let b = k - a;
                let wb = d.pow(b as u32);
                let sa = &self.coeffs[offsets[a]..offsets[a + 1]];
                let ob = &other.coeffs[offsets[b]..offsets[b + 1]];
                for (u, &x) in sa.iter().enumerate() {
                    for (v, &y) in ob.iter().enumerate() {
                        out[offsets[k] + u * wb + v] += x * y;
                    }
                }
            }
        }
        TruncatedSig::new(m, d, out)
    }

    /// Euclidean distance over levels `1..=depth`.
    pub fn distance(&self, other: &TruncatedSig) -> Result<f64> {
        if self.dim != other.dim || self.depth != other.depth {
            return Err(Error::Shape("signatures of different shape".into()));
        }
        Ok(self.coeffs[1..]
            .iter()
            .zip(&other.coeffs[1..])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Depth-`depth` signature of an augmented path.
pub fn signature(path: &AugmentedPath, depth: usize) -> Result<TruncatedSig> {
    check_depth(depth)?;
    let d = path.dim();
    let offsets = level_offsets(d, depth);
    let mut coeffs = vec![0.0; sig_len(d, depth)];
    signature_into(path.values(), d, depth, &offsets, &mut coeffs);
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("signature coefficient".into()));
    }
    TruncatedSig::new(depth, d, coeffs)
}

/// On-disk form of a signature: a header plus the flat coefficient array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureFile {
    pub depth: usize,
    pub dim: usize,
    pub chain: Vec<Augmentation>,
    pub coeffs: Vec<f64>,
}

impl SignatureFile {
    pub fn new(sig: &TruncatedSig, chain: &[Augmentation]) -> Self {
        Self { depth: sig.depth, dim: sig.dim, chain: chain.to_vec(), coeffs: sig.coeffs.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: SignatureFile = serde_json::from_str(text)?;
        TruncatedSig::new(f.depth, f.dim, f.coeffs.clone())?;
        Ok(f)
    }

    pub fn signature(&self) -> Result<TruncatedSig> {
        TruncatedSig::new(self.depth, self.dim, self.coeffs.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigkit::augment::augment;

    fn sig(values: &[f64], dim: usize, depth: usize) -> TruncatedSig {
        signature(&AugmentedPath::from_values(values.to_vec(), dim).unwrap(), depth).unwrap()
    }

    #[test]
    fn lengths_and_offsets() {
        assert_eq!(sig_len(2, 3), 1 + 2 + 4 + 8);
        assert_eq!(level_offsets(3, 2), vec![0, 1, 4, 13]);
        assert_eq!(sig_len(5, 0), 1);
    }

    #[test]
    fn constant_path_is_identity() {
        let s = sig(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0], 2, 3);
        assert_eq!(s, TruncatedSig::identity(3, 2));
    }

    #[test]
    fn linear_segment_is_tensor_exponential() {
        let s = sig(&[0.0, 0.0, 1.0, 2.0], 2, 3);
        assert_eq!(s.level(1), &[1.0, 2.0]);
        assert_eq!(s.level(2), &[0.5, 1.0, 1.0, 2.0]);
        assert!((s.word(&[1, 1, 1]) - 8.0 / 6.0).abs() < 1e-15);
        assert!((s.word(&[0, 1, 0]) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn one_dimensional_levels_are_powers_over_factorials() {
        let s = sig(&[0.0, 1.5, -0.5, 2.0], 1, 4);
        let x: f64 = 2.0;
        let expected = [1.0, x, x * x / 2.0, x.powi(3) / 6.0, x.powi(4) / 24.0];
        for (a, b) in s.coeffs().iter().zip(expected) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn lead_lag_area_is_half_quadratic_variation() {
        let p = augment(&[0.0, 1.0, 3.0], 1, &[Augmentation::LeadLag]).unwrap();
        let s = signature(&p, 2).unwrap();
        // Lévy area of (lead, lag) is half the quadratic variation 1 + 4
        let area = 0.5 * (s.word(&[0, 1]) - s.word(&[1, 0]));
        assert!((area - 2.5).abs() < 1e-14);
    }

    #[test]
    fn product_matches_concatenation() {
        let a = [0.0, 0.0, 1.0, -1.0, 0.5, 2.0];
        let b = [0.5, 2.0, 0.0, 1.0, 3.0, 3.0];
        let joined = [0.0, 0.0, 1.0, -1.0, 0.5, 2.0, 0.0, 1.0, 3.0, 3.0];
        let lhs = sig(&a, 2, 3).product(&sig(&b, 2, 3)).unwrap();
        let rhs = sig(&joined, 2, 3);
        for (x, y) in lhs.coeffs().iter().zip(rhs.coeffs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_keeps_header() {
        let s = sig(&[0.0, 1.0, 0.5], 1, 2);
        let f = SignatureFile::new(&s, &[Augmentation::Time]);
        let back = SignatureFile::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.signature().unwrap(), s);
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(TruncatedSig::new(2, 2, vec![1.0; 6]).is_err());
    }
}
