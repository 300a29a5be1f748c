mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use wmlab_core::attack::simulate_inputs;
use wmlab_core::{
    assemble_attack_channel, assemble_nominal, assemble_watermarked, make_watermark_pair, AttackMode, Controller,
    Error, Plant, WatermarkPair,
};

struct Config {
    plant: Plant,
    ctrl: Controller,
    h: WatermarkPair,
    q: WatermarkPair,
}

fn random_config(rng: &mut ChaCha8Rng) -> Config {
    let (m, p) = (rng.random_range(1..=2), rng.random_range(1..=2));
    let n = rng.random_range(m.max(p)..=3);
    let pj = rng.random_range(1..=2);
    let plant = random_plant(rng, n, m, p, pj);
    let ctrl = random_controller(rng, &plant);
    let (sh, sq) = (rng.random_range(1..=2), rng.random_range(1..=2));
    let h = random_pair(rng, m, sh);
    let q = random_pair(rng, p, sq);
    Config { plant, ctrl, h, q }
}

fn sorted_spectrum(a: &DMatrix<f64>) -> Vec<num_complex::Complex64> {
    a.complex_eigenvalues().iter().copied().collect()
}

#[test]
fn reference_pair_generators() {
    let w = make_watermark_pair(scalar(0.6714), scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
    let g = w.generator();
    assert!((g.a()[(0, 0)] + 0.3286).abs() < 1e-12);
    assert_eq!((g.b()[(0, 0)], g.c()[(0, 0)], g.d()[(0, 0)]), (-1.0, 1.0, 1.0));
    let h = make_watermark_pair(scalar(0.5201), scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
    assert!((h.generator().a()[(0, 0)] + 0.4799).abs() < 1e-12);
    assert!(matches!(
        make_watermark_pair(scalar(1.5), scalar(1.0), scalar(1.0), scalar(1.0)),
        Err(Error::UnstableRemover { .. })
    ));
    assert!(matches!(
        make_watermark_pair(scalar(0.5), scalar(1.0), scalar(1.0), scalar(0.0)),
        Err(Error::NonInvertibleFeedthrough { .. })
    ));
}

#[test]
fn nominal_spectrum_separates() {
    let plant = reference_plant();
    let ctrl = reference_controller();
    let cl = assemble_nominal(&plant, &ctrl).unwrap();
    let mut expected = sorted_spectrum(&(plant.a() + plant.b() * &ctrl.k));
    expected.extend(sorted_spectrum(&(plant.a() - &ctrl.l * plant.c())));
    let got = sorted_spectrum(cl.ss().a());
    assert!(multiset_distance(&got, &expected) < 1e-8);
    assert!(got.iter().all(|v| v.norm() < 1.0));
}

#[test]
fn nominal_blocks_follow_error_coordinates() {
    let plant = reference_plant();
    let ctrl = reference_controller();
    let cl = assemble_nominal(&plant, &ctrl).unwrap();
    let (ap, bp, cp) = (plant.a(), plant.b(), plant.c());
    let mut a = DMatrix::zeros(4, 4);
    a.view_mut((0, 0), (2, 2)).copy_from(&(ap + bp * &ctrl.k));
    a.view_mut((0, 2), (2, 2)).copy_from(&(-(bp * &ctrl.k)));
    a.view_mut((2, 2), (2, 2)).copy_from(&(ap - &ctrl.l * cp));
    let mut b = DMatrix::zeros(4, 2);
    b.view_mut((0, 0), (2, 1)).copy_from(bp);
    b.view_mut((2, 0), (2, 1)).copy_from(bp);
    b.view_mut((2, 1), (2, 1)).copy_from(&(-&ctrl.l));
    let mut c = DMatrix::zeros(2, 4);
    c.view_mut((0, 2), (1, 2)).copy_from(cp);
    c.view_mut((1, 0), (1, 2)).copy_from(plant.c_j());
    let d = mat(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let ss = cl.ss();
    assert!((ss.a() - a).amax() < 1e-12);
    assert!((ss.b() - b).amax() < 1e-12);
    assert!((ss.c() - c).amax() < 1e-12);
    assert!((ss.d() - d).amax() < 1e-12);
}

#[test]
fn impulse_residual_after_one_step_is_cb() {
    let plant = reference_plant();
    let cl = assemble_nominal(&plant, &reference_controller()).unwrap();
    let mut a = DMatrix::zeros(3, 2);
    a[(0, 0)] = 1.0;
    let sim = simulate_inputs(&cl, &a, None).unwrap();
    assert_eq!(sim.y_r()[(0, 0)], 0.0);
    assert!(sim.y_r()[(1, 0)].abs() < 1e-15);
}

#[test]
fn zero_input_zero_state_gives_zero_outputs() {
    let plant = reference_plant();
    let (h, q) = reference_pairs();
    let cl = assemble_watermarked(&plant, &reference_controller(), &h, &q, AttackMode::Covert).unwrap();
    let sim = simulate_inputs(&cl, &DMatrix::zeros(50, 1), None).unwrap();
    assert!(sim.signals.iter().all(|(_, s)| s.amax() == 0.0));
}

#[test]
fn identity_pairs_match_nominal_transfer() {
    let mut rng = rng(31);
    let plant = reference_plant();
    let ctrl = reference_controller();
    let id = WatermarkPair::identity(1);
    let wm = assemble_watermarked(&plant, &ctrl, &id, &id, AttackMode::Generic).unwrap();
    let nom = assemble_nominal(&plant, &ctrl).unwrap();
    for _ in 0..16 {
        let z = random_z(&mut rng);
        let e = max_abs_c(&(wm.ss().eval_tf(z).unwrap() - nom.ss().eval_tf(z).unwrap()));
        assert!(e < 1e-10);
    }
}

#[test]
fn reference_covert_loop_matches_component_stepping() {
    let mut rng = rng(32);
    let plant = reference_plant();
    let ctrl = reference_controller();
    let (h, q) = reference_pairs();
    let cl = assemble_watermarked(&plant, &ctrl, &h, &q, AttackMode::Covert).unwrap();
    let attack = random_matrix(&mut rng, 100, 1, 1.0);
    let sim = simulate_inputs(&cl, &attack, None).unwrap();
    let stepped = component_simulation(&plant, &ctrl, &h, &q, AttackMode::Covert, &attack, None, None);
    let mut col = 0;
    for (_, s) in &sim.signals {
        let e = (s - stepped.columns(col, s.ncols())).amax();
        assert!(e <= 1e-9);
        col += s.ncols();
    }
}

#[test]
fn attack_channel_examples() {
    let plant = reference_plant();
    let id = WatermarkPair::identity(1);
    let sa = assemble_attack_channel(&id, &plant, &id).unwrap();
    let mut x = DVector::zeros(sa.n());
    let mut rng = rng(33);
    for _ in 0..50 {
        let u = DVector::from_element(1, rng.random_range(-1.0..1.0));
        let y = sa.c() * &x + sa.d() * &u;
        assert!(y.amax() < 1e-12);
        x = sa.a() * &x + sa.b() * &u;
    }
    // Reference pairs break the cancellation: the impulse response is nonzero
    // and matches the rational channel P (W H − 1).
    let (h, q) = reference_pairs();
    let sa = assemble_attack_channel(&h, &plant, &q).unwrap();
    let z = num_complex::Complex64::new(1.3, 0.4);
    let gp = tf_eval(&plant.measured(), z)[(0, 0)];
    let gh = tf_eval(h.remover(), z)[(0, 0)];
    let gw = tf_eval(q.generator(), z)[(0, 0)];
    let got = sa.eval_tf(z).unwrap()[(0, 0)];
    assert!((got - gp * (gw * gh - 1.0)).norm() < 1e-12);
    let mut x = DVector::zeros(sa.n());
    let mut energy = 0.0;
    for k in 0..30 {
        let u = DVector::from_element(1, if k == 0 { 1.0 } else { 0.0 });
        energy += (sa.c() * &x + sa.d() * &u).norm_squared();
        x = sa.a() * &x + sa.b() * &u;
    }
    assert!(energy > 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn watermark_transparency(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let c = random_config(&mut rng);
        let cl = assemble_watermarked(&c.plant, &c.ctrl, &c.h, &c.q, AttackMode::Generic).unwrap();
        let n = c.plant.n();
        let mut x0 = DVector::zeros(cl.ss().n());
        for i in 0..2 * n {
            x0[i] = rng.random_range(-1.0..1.0);
        }
        let zero = DMatrix::zeros(501, cl.ss().m());
        let sim = simulate_inputs(&cl, &zero, Some(&x0)).unwrap();
        let du = sup_norm(&(sim.signal("u_h").unwrap() - sim.signal("u_c").unwrap()));
        let dy = sup_norm(&(sim.signal("y_q").unwrap() - sim.signal("y_p").unwrap()));
        prop_assert!(du <= 1e-9 && dy <= 1e-9, "du {} dy {}", du, dy);
    }

    #[test]
    fn assembly_matches_component_stepping(seed in any::<u64>(), covert in any::<bool>()) {
        let mut rng = rng(seed);
        let c = random_config(&mut rng);
        let mode = if covert { AttackMode::Covert } else { AttackMode::Generic };
        let cl = assemble_watermarked(&c.plant, &c.ctrl, &c.h, &c.q, mode).unwrap();
        let attack = random_matrix(&mut rng, 80, cl.ss().m(), 1.0);
        let sim = simulate_inputs(&cl, &attack, None).unwrap();
        let stepped = component_simulation(&c.plant, &c.ctrl, &c.h, &c.q, mode, &attack, None, None);
        let mut col = 0;
        for (_, s) in &sim.signals {
            prop_assert!((s - stepped.columns(col, s.ncols())).amax() <= 1e-9);
            col += s.ncols();
        }
    }

    #[test]
    fn covert_embedding_blinds_residual(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let c = random_config(&mut rng);
        let (m, p) = (c.plant.m(), c.plant.p());
        let cl = assemble_watermarked(
            &c.plant, &c.ctrl, &WatermarkPair::identity(m), &WatermarkPair::identity(p), AttackMode::Covert,
        ).unwrap();
        let attack = random_matrix(&mut rng, 200, m, 5.0);
        let sim = simulate_inputs(&cl, &attack, None).unwrap();
        prop_assert!(sup_norm(sim.y_r()) <= 1e-9 * (1.0 + sup_norm(sim.y_j())));
    }

    #[test]
    fn nominal_separation_random(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let c = random_config(&mut rng);
        let cl = assemble_nominal(&c.plant, &c.ctrl).unwrap();
        let mut expected = sorted_spectrum(&(c.plant.a() + c.plant.b() * &c.ctrl.k));
        expected.extend(sorted_spectrum(&(c.plant.a() - &c.ctrl.l * c.plant.c())));
        prop_assert!(multiset_distance(&sorted_spectrum(cl.ss().a()), &expected) <= 1e-6);
    }
}
