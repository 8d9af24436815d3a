//! Signatures as a differentiable tape operation.

use std::rc::Rc;

use super::augment::{augmentation_map, Augmentation};
use super::signature::{check_depth, chen_update, exp_increment, level_offsets, sig_len, signature_into, TruncatedSig};
use crate::error::{Error, Result};
use crate::nnkit::{CustomOp, GatherMap, GatherSrc, Tensor, Var};

/// Row-wise signature: `[B × points·dim] → [B × sig_len]`.
#[derive(Debug, Clone)]
struct SignatureOp {
    points: usize,
    dim: usize,
    depth: usize,
}

impl SignatureOp {
    fn forward(&self, input: &Tensor) -> Tensor {
        let offsets = level_offsets(self.dim, self.depth);
        let len = sig_len(self.dim, self.depth);
        let mut out = Tensor::zeros(input.rows(), len);
        for (b, row) in out.data_mut().chunks_mut(len).enumerate() {
            signature_into(input.row_slice(b), self.dim, self.depth, &offsets, row);
        }
        out
    }

    /// Vector-Jacobian product for one path.
    fn backward_row(&self, x: &[f64], g_out: &[f64], g_x: &mut [f64], offsets: &[usize]) {
        let (d, m, n) = (self.dim, self.depth, self.points);
        let len = offsets[m + 1];
        // prefix signatures of the first j+1 points
        let mut prefix = vec![0.0; n * len];
        prefix[0] = 1.0;
        let mut e = vec![0.0; len];
        let mut delta = vec![0.0; d];
        let deltas: Vec<f64> = (1..n)
            .flat_map(|k| (0..d).map(move |c| (k, c)))
            .map(|(k, c)| x[k * d + c] - x[(k - 1) * d + c])
            .collect();
        for j in 1..n {
            delta.copy_from_slice(&deltas[(j - 1) * d..j * d]);
            exp_increment(&delta, m, offsets, &mut e);
            let (done, rest) = prefix.split_at_mut(j * len);
            let cur = &mut rest[..len];
            cur.copy_from_slice(&done[(j - 1) * len..]);
            chen_update(cur, &e, d, m, offsets);
        }

        let mut g = g_out.to_vec();
        let mut g_prev = vec![0.0; len];
        let mut g_e = vec![0.0; len];
        for j in (1..n).rev() {
            delta.copy_from_slice(&deltas[(j - 1) * d..j * d]);
            exp_increment(&delta, m, offsets, &mut e);
            let prev = &prefix[(j - 1) * len..j * len];
            g_prev.iter_mut().for_each(|v| *v = 0.0);
            g_e.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..=m {
                for a in 0..=k {
                    let b = k - a;
                    let wb = d.pow(b as u32);
                    let gk = &g[offsets[k]..offsets[k + 1]];
                    let eb = &e[offsets[b]..offsets[b + 1]];
                    let pa = &prev[offsets[a]..offsets[a + 1]];
                    for (u, &pu) in pa.iter().enumerate() {
                        let gw = &gk[u * wb..(u + 1) * wb];
                        let mut acc = 0.0;
                        for (v, (&gv, &ev)) in gw.iter().zip(eb).enumerate() {
                            acc += gv * ev;
                            if b > 0 {
                                g_e[offsets[b] + v] += gv * pu;
                            }
                        }
                        g_prev[offsets[a] + u] += acc;
                    }
                }
            }
            // E_b = E_{b-1} ⊗ Δ / b, unwound from the top level down
            let mut g_delta = vec![0.0; d];
            for b in (1..=m).rev() {
                let inv_b = 1.0 / b as f64;
                let (lo, hi) = g_e.split_at_mut(offsets[b]);
                let gb = &hi[..offsets[b + 1] - offsets[b]];
                let e_prev = &e[offsets[b - 1]..offsets[b]];
                let g_lo = &mut lo[offsets[b - 1]..];
                for (u, &eu) in e_prev.iter().enumerate() {
                    let row = &gb[u * d..(u + 1) * d];
                    let mut acc = 0.0;
                    for (c, &gv) in row.iter().enumerate() {
                        acc += gv * delta[c];
                        g_delta[c] += gv * eu * inv_b;
                    }
                    if b > 1 {
                        g_lo[u] += acc * inv_b;
                    }
                }
            }
            for c in 0..d {
                g_x[j * d + c] += g_delta[c];
                g_x[(j - 1) * d + c] -= g_delta[c];
            }
            std::mem::swap(&mut g, &mut g_prev);
        }
    }
}

impl CustomOp for SignatureOp {
    fn name(&self) -> &str {
        "signature"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let offsets = level_offsets(self.dim, self.depth);
        let mut g_x = Tensor::zeros(x.rows(), x.cols());
        let cols = x.cols();
        for b in 0..x.rows() {
            let g_row = &mut g_x.data_mut()[b * cols..(b + 1) * cols];
            self.backward_row(x.row_slice(b), grad_out.row_slice(b), g_row, &offsets);
        }
        vec![Some(g_x)]
    }
}

/// Signatures of a batch of paths held on the tape, one path per row
/// (row-major `points × dim` within the row).
pub fn signature_rows<'t>(paths: Var<'t>, points: usize, dim: usize, depth: usize) -> Result<Var<'t>> {
    let (_, cols) = paths.shape();
    if cols != points * dim || points < 2 || dim == 0 {
        return Err(Error::Shape(format!("{cols} columns are not {points} points of {dim} channels")));
    }
    check_depth(depth)?;
    let op = SignatureOp { points, dim, depth };
    let out = op.forward(&paths.value());
    if !out.is_finite() {
        return Err(Error::NonFinite("signature coefficient".into()));
    }
    Ok(paths.tape().custom(Rc::new(op), &[paths], out))
}

/// Gather map that selects `channels` of a `points × dim` row layout and then
/// applies `chain`, for every one of `rows` paths.
pub fn augment_rows_map(
    rows: usize,
    points: usize,
    dim: usize,
    channels: &[usize],
    chain: &[Augmentation],
) -> Result<(usize, usize, GatherMap)> {
    if let Some(c) = channels.iter().find(|&&c| c >= dim) {
        return Err(Error::Shape(format!("channel {c} of a {dim}-channel path")));
    }
    let (n, d, local) = augmentation_map(points, channels.len(), chain)?;
    let row_len = points * dim;
    let mut src = Vec::with_capacity(rows * local.len());
    for r in 0..rows {
        src.extend(local.iter().map(|s| match *s {
            GatherSrc::Input(i) => {
                let (k, c) = (i / channels.len(), i % channels.len());
                GatherSrc::Input(r * row_len + k * dim + channels[c])
            }
            GatherSrc::Const(v) => GatherSrc::Const(v),
        }));
    }
    Ok((n, d, GatherMap { rows, cols: n * d, src }))
}

/// Expected signature of the selected, augmented paths as a `1 × sig_len` node.
pub fn expected_signature_on_tape<'t>(
    paths: Var<'t>,
    points: usize,
    dim: usize,
    channels: &[usize],
    chain: &[Augmentation],
    depth: usize,
) -> Result<Var<'t>> {
    let rows = paths.shape().0;
    let (n, d, map) = augment_rows_map(rows, points, dim, channels, chain)?;
    let aug = paths.gather(Rc::new(map))?;
    Ok(signature_rows(aug, n, d, depth)?.mean_rows())
}

/// Squared distance, levels 1 and up, between the expected signature of the
/// paths on the tape and a fixed reference.
pub fn sig_mmd_on_tape<'t>(
    paths: Var<'t>,
    points: usize,
    dim: usize,
    channels: &[usize],
    chain: &[Augmentation],
    reference: &TruncatedSig,
) -> Result<Var<'t>> {
    let es = expected_signature_on_tape(paths, points, dim, channels, chain, reference.depth())?;
    if es.shape().1 != reference.coeffs().len() {
        return Err(Error::Shape("reference signature has a different shape".into()));
    }
    let mut target = reference.coeffs().to_vec();
    // level 0 is 1 on both sides; zero it out of the difference explicitly
    target[0] = es.value().data()[0];
    let diff = es.sub(&paths.tape().constant(Tensor::row(target)))?;
    Ok(diff.square().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::{check_gradient, Tape};
    use crate::sigkit::{augment, signature};

    #[test]
    fn forward_matches_plain_signature() {
        let x = Tensor::from_fn(3, 8, |r, c| ((r * 8 + c) as f64 * 0.37).sin());
        let tape = Tape::new();
        let s = signature_rows(tape.constant(x.clone()), 4, 2, 3).unwrap();
        for r in 0..3 {
            let p = augment(x.row_slice(r), 2, &[]).unwrap();
            assert_eq!(s.value().row_slice(r), signature(&p, 3).unwrap().coeffs());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = Tensor::from_fn(2, 15, |r, c| ((r * 15 + c) as f64 * 0.61).cos());
        let w = Tensor::from_fn(2, 40, |r, c| ((r * 40 + c) as f64 * 0.23).sin());
        let check = check_gradient(
            |tape, v| {
                let s = signature_rows(v[0], 5, 3, 3)?;
                s.mul(&tape.constant(w.clone())).map(|p| p.sum())
            },
            &[x],
            8,
            1e-5,
            1e-8,
            3,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-6, "{check:?}");
    }

    #[test]
    fn augmented_mmd_gradient_matches_finite_differences() {
        let x = Tensor::from_fn(3, 12, |r, c| 1.0 + 0.1 * ((r * 12 + c) as f64 * 0.77).sin());
        let reference = TruncatedSig::new(2, 5, (0..31).map(|i| if i == 0 { 1.0 } else { 0.01 * i as f64 }).collect())
            .unwrap();
        let chain = [Augmentation::LeadLag, Augmentation::Time];
        let check = check_gradient(
            |_, v| sig_mmd_on_tape(v[0], 4, 3, &[0, 2], &chain, &reference),
            &[x],
            8,
            1e-5,
            1e-10,
            5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-6, "{check:?}");
    }
}
