//! Iterated integrals of a piecewise-linear path computed directly from their
//! definition: on each segment every `I_w` is a polynomial in the local
//! parameter, and `I_{w·i}(u) = I_{w·i}(0) + Δ_i ∫_0^u I_w`. Shares no code
//! with the Chen-product implementation.

#![allow(dead_code)]

/// Words of length `k` over `dim` letters in lexicographic order.
pub fn words(dim: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|w| {
                (0..dim).map(move |i| {
                    let mut v = w.clone();
                    v.push(i);
                    v
                })
            })
            .collect();
    }
    out
}

fn index(word: &[usize], dim: usize) -> usize {
    word.iter().fold(0, |acc, &i| acc * dim + i)
}

/// `levels[k][index(w)] = I_w(path)` for `|w| = k ≤ depth`.
pub fn iterated_integrals(points: &[f64], dim: usize, depth: usize) -> Vec<Vec<f64>> {
    let n = points.len() / dim;
    let mut levels: Vec<Vec<f64>> = (0..=depth).map(|k| vec![0.0; dim.pow(k as u32)]).collect();
    levels[0][0] = 1.0;
    for seg in 1..n {
        let delta: Vec<f64> = (0..dim).map(|i| points[seg * dim + i] - points[(seg - 1) * dim + i]).collect();
        // polys[k][w] = coefficients in u of I_w on this segment
        let mut polys: Vec<Vec<Vec<f64>>> = vec![vec![vec![1.0]]];
        for k in 1..=depth {
            let mut level = Vec::with_capacity(dim.pow(k as u32));
            for w in words(dim, k) {
                let prefix = &polys[k - 1][index(&w[..k - 1], dim)];
                let d = delta[w[k - 1]];
                let mut p = vec![levels[k][index(&w, dim)]];
                p.extend(prefix.iter().enumerate().map(|(j, c)| d * c / (j + 1) as f64));
                level.push(p);
            }
            polys.push(level);
        }
        for k in 1..=depth {
            for (slot, p) in levels[k].iter_mut().zip(&polys[k]) {
                *slot = p.iter().sum();
            }
        }
    }
    levels
}

/// Inserts `parts − 1` evenly spaced points inside every segment.
pub fn refine(points: &[f64], dim: usize, parts: usize) -> Vec<f64> {
    let n = points.len() / dim;
    let mut out = points[..dim].to_vec();
    for seg in 1..n {
        for j in 1..=parts {
            let u = j as f64 / parts as f64;
            for i in 0..dim {
                let a = points[(seg - 1) * dim + i];
                let b = points[seg * dim + i];
                out.push(a + u * (b - a));
            }
        }
    }
    out
}
