//! Expected signatures and the SigW1 / SigMMD distances between path batches.

use super::augment::{augment, Augmentation};
use super::signature::{check_depth, level_offsets, sig_len, signature_into, TruncatedSig};
use crate::error::{Error, Result};
use crate::genkit::PathBatch;

/// Mean of the per-path signatures of the augmented paths.
pub fn expected_signature(batch: &PathBatch, depth: usize, chain: &[Augmentation]) -> Result<TruncatedSig> {
    check_depth(depth)?;
    let first = augment(batch.path(0), batch.dims(), chain)?;
    let d = first.dim();
    let offsets = level_offsets(d, depth);
    let len = sig_len(d, depth);
    let mut acc = vec![0.0; len];
    let mut sig = vec![0.0; len];
    for b in 0..batch.batch() {
        let p = if b == 0 { first.clone() } else { augment(batch.path(b), batch.dims(), chain)? };
        signature_into(p.values(), d, depth, &offsets, &mut sig);
        for (a, s) in acc.iter_mut().zip(&sig) {
            *a += s;
        }
    }
    let inv = 1.0 / batch.batch() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    // the mean of exact ones can drift by an ulp; level 0 is 1 by definition
    acc[0] = 1.0;
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expected signature".into()));
    }
    TruncatedSig::new(depth, d, acc)
}

/// l2 distance between the expected truncated signatures of two batches.
pub fn sig_w1(p: &PathBatch, q: &PathBatch, depth: usize, chain: &[Augmentation]) -> Result<f64> {
    if p.dims() != q.dims() {
        return Err(Error::Shape(format!("batches with {} and {} channels", p.dims(), q.dims())));
    }
    expected_signature(p, depth, chain)?.distance(&expected_signature(q, depth, chain)?)
}

/// Square of [`sig_w1`].
pub fn sig_mmd(p: &PathBatch, q: &PathBatch, depth: usize, chain: &[Augmentation]) -> Result<f64> {
    sig_w1(p, q, depth, chain).map(|w| w * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genkit::ChannelRole;
    use crate::sigkit::signature;

    fn batch(paths: &[&[f64]]) -> PathBatch {
        let values = paths.iter().flat_map(|p| p.iter().copied()).collect();
        PathBatch::new(values, paths.len(), paths[0].len() - 1, vec![ChannelRole::Asset]).unwrap()
    }

    #[test]
    fn single_path_batch_is_its_signature() {
        let b = batch(&[&[1.0, 1.2, 0.9]]);
        let chain = [Augmentation::Time];
        let es = expected_signature(&b, 3, &chain).unwrap();
        let s = signature(&augment(&[1.0, 1.2, 0.9], 1, &chain).unwrap(), 3).unwrap();
        assert_eq!(es, s);
    }

    #[test]
    fn identical_batches_have_zero_distance() {
        let b = batch(&[&[1.0, 1.2, 0.9], &[1.0, 0.8, 1.1]]);
        assert_eq!(sig_w1(&b, &b, 2, &[Augmentation::LeadLag]).unwrap(), 0.0);
        assert_eq!(sig_mmd(&b, &b, 2, &[]).unwrap(), 0.0);
    }

    #[test]
    fn mmd_is_w1_squared() {
        let p = batch(&[&[1.0, 1.2, 0.9], &[1.0, 0.8, 1.1]]);
        let q = batch(&[&[1.0, 1.1, 1.0]]);
        let w = sig_w1(&p, &q, 3, &[Augmentation::Time]).unwrap();
        let m = sig_mmd(&p, &q, 3, &[Augmentation::Time]).unwrap();
        assert!(w > 0.0);
        assert_eq!(m, w * w);
    }
}
