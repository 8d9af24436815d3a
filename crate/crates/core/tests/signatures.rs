mod common;

use common::sig_oracle::{iterated_integrals, refine, words};
use proptest::prelude::*;
use robhedge::genkit::{ChannelRole, PathBatch};
use robhedge::sigkit::{sig_w1, signature, AugmentedPath, TruncatedSig};

fn sig(values: &[f64], dim: usize, depth: usize) -> TruncatedSig {
    signature(&AugmentedPath::from_values(values.to_vec(), dim).unwrap(), depth).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn path_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..=3, 1usize..=4, 2usize..=7).prop_flat_map(|(dim, depth, points)| {
        (Just(dim), Just(depth), prop::collection::vec(-2.0f64..2.0, dim * points))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn chen_signature_matches_direct_iterated_integrals((dim, depth, values) in path_strategy()) {
        let s = sig(&values, dim, depth);
        let oracle = iterated_integrals(&refine(&values, dim, 3), dim, depth);
        for k in 0..=depth {
            for (w, expected) in words(dim, k).iter().zip(&oracle[k]) {
                prop_assert!(rel_close(s.word(w), *expected, 1e-9), "word {w:?}: {} vs {expected}", s.word(w));
            }
        }
    }

    #[test]
    fn split_at_interior_point_is_a_product((dim, depth, values) in path_strategy(), cut in 1usize..6) {
        let n = values.len() / dim;
        prop_assume!(n >= 3);
        let cut = 1 + cut % (n - 2);
        let left = &values[..(cut + 1) * dim];
        let right = &values[cut * dim..];
        let whole = sig(&values, dim, depth);
        let joined = sig(left, dim, depth).product(&sig(right, dim, depth)).unwrap();
        for (a, b) in whole.coeffs().iter().zip(joined.coeffs()) {
            prop_assert!(rel_close(*a, *b, 1e-10), "{a} vs {b}");
        }
    }

    #[test]
    fn one_dimensional_levels_are_increment_powers(values in prop::collection::vec(-2.0f64..2.0, 2..8), depth in 1usize..=6) {
        let s = sig(&values, 1, depth);
        let x = values[values.len() - 1] - values[0];
        let mut expected = 1.0;
        for k in 0..=depth {
            if k > 0 {
                expected *= x / k as f64;
            }
            prop_assert!((s.level(k)[0] - expected).abs() <= 1e-12, "level {k}: {} vs {expected}", s.level(k)[0]);
        }
    }

    #[test]
    fn collinear_points_do_not_change_the_signature((dim, depth, values) in path_strategy(), parts in 2usize..5) {
        let a = sig(&values, dim, depth);
        let b = sig(&refine(&values, dim, parts), dim, depth);
        for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
            prop_assert!(rel_close(*x, *y, 1e-10), "{x} vs {y}");
        }
    }

    #[test]
    fn sig_w1_is_a_pseudometric(
        p in prop::collection::vec(-1.0f64..1.0, 12),
        q in prop::collection::vec(-1.0f64..1.0, 12),
        r in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let batch = |v: &[f64]| PathBatch::new(v.to_vec(), 2, 2, vec![ChannelRole::Asset, ChannelRole::Hidden]).unwrap();
        let (p, q, r) = (batch(&p), batch(&q), batch(&r));
        let d = |a: &PathBatch, b: &PathBatch| sig_w1(a, b, 3, &[]).unwrap();
        prop_assert!(d(&p, &q) >= 0.0);
        prop_assert_eq!(d(&p, &p), 0.0);
        prop_assert!((d(&p, &q) - d(&q, &p)).abs() <= 1e-12);
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-10);
    }
}

#[test]
fn oracle_reproduces_a_hand_computed_area() {
    // unit square corner path: (0,0) → (1,0) → (1,1)
    let levels = iterated_integrals(&[0.0, 0.0, 1.0, 0.0, 1.0, 1.0], 2, 2);
    assert_eq!(levels[1], vec![1.0, 1.0]);
    assert_eq!(levels[2], vec![0.5, 1.0, 0.0, 0.5]);
}
