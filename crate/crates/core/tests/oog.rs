mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use wmlab_core::linalg::min_sym_eigenvalue;
use wmlab_core::{
    assemble_watermarked, boundedness_check, compute_oog, undetectability_check, verify_dissipativity, AttackMode,
    Boundedness, ClosedLoop, OogStatus, StateSpace, WatermarkPair,
};

fn scalar_loop(a: f64, b: f64, c1: f64, d1: f64, c2: f64, d2: f64) -> ClosedLoop {
    let ss = StateSpace::new(scalar(a), scalar(b), mat(2, 1, &[c1, c2]), mat(2, 1, &[d1, d2])).unwrap();
    ClosedLoop::from_parts(ss, 1).unwrap()
}

/// Adds a random extra row to `y₁` of a SISO instance.
fn with_extra_residual_row(inst: &SisoInstance, row: &[f64], d: f64) -> ClosedLoop {
    let ss = &inst.ss;
    let n = ss.n();
    let mut c = DMatrix::zeros(3, n);
    c.row_mut(0).copy_from(&ss.c().row(0));
    c.row_mut(1).copy_from_slice(row);
    c.row_mut(2).copy_from(&ss.c().row(1));
    let dm = mat(3, 1, &[ss.d()[(0, 0)], d, ss.d()[(1, 0)]]);
    ClosedLoop::from_parts(StateSpace::new(ss.a().clone(), ss.b().clone(), c, dm).unwrap(), 2).unwrap()
}

#[test]
fn scalar_example_and_halved_gain() {
    let cl = scalar_loop(0.5, 1.0, 1.0, 1.0, 1.0, 0.0);
    let cert = compute_oog(&cl).unwrap();
    assert_eq!(cert.status, OogStatus::Optimal);
    assert!((cert.gamma - 4.0).abs() < 4e-3);
    assert!((cert.gamma - frequency_ratio_oracle(&[0.5, 1.0], &[1.0], 10_000)).abs() < 4e-3);
    assert!(verify_dissipativity(&cl, cert.gamma, &cert.p) <= 1e-6);
    assert!(verify_dissipativity(&cl, cert.gamma / 2.0, &cert.p) > 0.0);
    assert!(min_sym_eigenvalue(&cert.p) >= -1e-8);
}

#[test]
fn zero_system_is_trivially_dissipative() {
    let cl = scalar_loop(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for g in [0.0, 1.0, 10.0] {
        assert!(verify_dissipativity(&cl, g, &DMatrix::zeros(1, 1)) <= 0.0);
    }
}

#[test]
fn identical_outputs_have_unit_gain() {
    let cl = scalar_loop(0.5, 1.0, 1.0, 1.0, 1.0, 1.0);
    let cert = compute_oog(&cl).unwrap();
    assert!((cert.gamma - 1.0).abs() < 1e-4);
}

#[test]
fn unbounded_verdicts() {
    let zero_at_two = scalar_loop(0.5, 1.0, -1.5, 1.0, 1.0, 0.0);
    assert!(matches!(boundedness_check(&zero_at_two).unwrap(), Boundedness::UnboundedByZeros { .. }));
    assert_eq!(compute_oog(&zero_at_two).unwrap().status, OogStatus::Unbounded);
    let feedthrough = scalar_loop(0.5, 1.0, 1.0, 0.0, 1.0, 1.0);
    assert_eq!(boundedness_check(&feedthrough).unwrap(), Boundedness::UnboundedByFeedthrough);
    assert_eq!(compute_oog(&feedthrough).unwrap().status, OogStatus::Unbounded);
    let min_phase = scalar_loop(0.5, 1.0, 1.0, 1.0, 1.0, 0.0);
    assert!(boundedness_check(&min_phase).unwrap().is_bounded());
}

#[test]
fn reference_loop_without_watermark_is_unbounded() {
    let id = WatermarkPair::identity(1);
    let cl =
        assemble_watermarked(&reference_plant(), &reference_controller(), &id, &id, AttackMode::Covert).unwrap();
    assert!(!boundedness_check(&cl).unwrap().is_bounded());
    assert_eq!(compute_oog(&cl).unwrap().status, OogStatus::Unbounded);
}

#[test]
fn reference_watermark_certificate() {
    let (h, q) = reference_pairs();
    let cl = assemble_watermarked(&reference_plant(), &reference_controller(), &h, &q, AttackMode::Covert).unwrap();
    assert!(boundedness_check(&cl).unwrap().is_bounded());
    let cert = compute_oog(&cl).unwrap();
    assert_eq!(cert.status, OogStatus::Optimal);
    assert!(cert.gamma.is_finite() && cert.gamma > 1.0);
    assert!(verify_dissipativity(&cl, cert.gamma, &cert.p) <= 1e-6);
    assert!(min_sym_eigenvalue(&cert.p) >= -1e-8);
}

#[test]
fn undetectability_examples() {
    let plant = reference_plant();
    let (h, q) = reference_pairs();
    assert!(!undetectability_check(&h, &plant, &q).unwrap().is_stealthy());
    let id = WatermarkPair::identity(1);
    assert!(undetectability_check(&id, &plant, &id).unwrap().is_stealthy());
    // H = Q makes W P H = P for scalar channels.
    assert!(undetectability_check(&q, &plant, &q).unwrap().is_stealthy());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn extra_residual_row_never_increases_gain(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let inst = random_siso_instance(&mut rng);
        let base = compute_oog(&ClosedLoop::from_parts(inst.ss.clone(), 1).unwrap()).unwrap();
        prop_assert_eq!(base.status, OogStatus::Optimal);
        let row: Vec<f64> = (0..inst.ss.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = if rng.random_bool(0.5) { rng.random_range(-1.0..1.0) } else { 0.0 };
        let more = compute_oog(&with_extra_residual_row(&inst, &row, d)).unwrap();
        prop_assert_eq!(more.status, OogStatus::Optimal);
        prop_assert!(more.gamma <= base.gamma * (1.0 + 1e-5) + 1e-8, "{} > {}", more.gamma, base.gamma);
    }

    #[test]
    fn matched_pairs_are_stealthy(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let n = rng.random_range(2..=3);
        let plant = random_plant(&mut rng, n, 1, 1, 1);
        let states = rng.random_range(1..=2);
        let pair = random_pair(&mut rng, 1, states);
        prop_assert!(undetectability_check(&pair, &plant, &pair).unwrap().is_stealthy());
    }

    #[test]
    fn certificates_are_positive_semidefinite(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let inst = random_siso_instance(&mut rng);
        let cl = ClosedLoop::from_parts(inst.ss, 1).unwrap();
        let cert = compute_oog(&cl).unwrap();
        prop_assert_eq!(cert.status, OogStatus::Optimal);
        prop_assert!(min_sym_eigenvalue(&cert.p) >= -1e-8);
        prop_assert!(verify_dissipativity(&cl, cert.gamma, &cert.p) <= 1e-6);
    }
}
