use robhedge::genkit::GeneratorParams;
use robhedge_py::api;

#[test]
fn sample_returns_point_major_rows() {
    let rows = api::sample(&GeneratorParams::heston(1.0, 0.04, 0.5, -0.7, 1.0), 3, 5, 0.01, 4).unwrap();
    assert_eq!(rows.len(), 5);
    // asset, variance and volatility swap at 5 points
    assert_eq!(rows[0].len(), 15);
    assert_eq!(rows[0][0], 1.0);
    assert_eq!(rows, api::sample(&GeneratorParams::heston(1.0, 0.04, 0.5, -0.7, 1.0), 3, 5, 0.01, 4).unwrap());
}

#[test]
fn signature_of_a_segment_is_its_exponential() {
    let s = api::signature(&[0.0, 0.0, 1.0, 2.0], 2, 2, &[]).unwrap();
    assert_eq!(s, vec![1.0, 1.0, 2.0, 0.5, 1.0, 1.0, 2.0]);
    let timed = api::signature(&[0.0, 1.0], 1, 1, &["time".to_string()]).unwrap();
    assert_eq!(timed.len(), 3);
    assert!(api::signature(&[0.0, 1.0], 1, 1, &["bogus".to_string()]).is_err());
}

#[test]
fn sig_mmd_vanishes_on_identical_batches() {
    let p = vec![vec![0.0, 0.5, 1.0], vec![0.0, -0.5, 0.2]];
    assert_eq!(api::sig_mmd(&p, &p, 1, 3, &["time".to_string()]).unwrap(), 0.0);
    assert!(api::sig_mmd(&p, &[vec![0.0, 1.0]], 1, 2, &[]).unwrap() > 0.0);
    assert!(api::sig_mmd(&[vec![0.0, 1.0], vec![0.0]], &p, 1, 2, &[]).is_err());
}

#[test]
fn entropic_risk_of_a_constant_is_minus_the_constant() {
    assert!((api::entropic_risk(&[0.3; 4], 130.0).unwrap() + 0.3).abs() < 1e-12);
    assert!(api::entropic_risk(&[0.1], -1.0).is_err());
}

#[test]
fn tiny_deep_hedge_runs_and_evaluates_out_of_sample() {
    let run = api::train_deep_hedge(&GeneratorParams::bs(0.2, 1.0), 0.004, 1, &[8, 8]).unwrap();
    assert!(run.final_objective.is_finite());
    let losses = api::oosp(&run.strategy, vec![GeneratorParams::bs(0.15, 1.0), GeneratorParams::bs(0.25, 1.0)], 1000, 2).unwrap();
    assert_eq!(losses.len(), 2);
    assert!(losses[0] < losses[1]);
    let (price, delta) = api::bs_call(1.0, 1.0, 0.2, 0.5);
    assert!(price > 0.0 && (0.0..1.0).contains(&delta));
}
