mod common;

use common::{box_vertices, nine_bus, polytope_vertices, vertices};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safegauge::invariance::{
    gain_search, max_rpi_for_gain, safe_action_set, shifted_safe_action_set, spectral_radius, tighten, verify_certificate,
    CertificateFile, RciCertificate, RpiOptions, SafetySystem,
};
use safegauge::plant::UniformSampler;
use safegauge::polytope::{contains, is_cset, HPolytope};
use safegauge::Error;

fn diag_system(a: f64, d_bar: f64, n: usize) -> SafetySystem {
    SafetySystem::new(
        DMatrix::identity(n, n) * a,
        DMatrix::identity(n, n),
        DMatrix::identity(n, n),
        HPolytope::centered_box(&vec![5.0; n]).unwrap(),
        HPolytope::centered_box(&vec![d_bar; n]).unwrap(),
        HPolytope::unit_box(n),
    )
    .unwrap()
}

fn unit_box_cert(sys: &SafetySystem, scale: f64) -> RciCertificate {
    let n = sys.state_dim();
    RciCertificate::new(DMatrix::identity(n, n), DVector::from_element(n, scale), DMatrix::zeros(n, n), sys).unwrap()
}

#[test]
fn half_contraction_with_small_disturbance_is_valid() {
    let sys = diag_system(0.5, 0.4, 2);
    let report = verify_certificate(&unit_box_cert(&sys, 1.0), &sys).unwrap();
    assert!(report.valid);
    // Worst next-state coordinate 0.5 + 0.4 = 0.9.
    for r in &report.invariance {
        assert!((r.slack - 0.1).abs() < 1e-12);
    }
    // Same verdict by enumerating S × D vertices.
    for x in box_vertices(&[1.0, 1.0]) {
        for d in box_vertices(&[0.4, 0.4]) {
            assert!((&x * 0.5 + d).amax() <= 0.9 + 1e-12);
        }
    }
}

#[test]
fn larger_disturbance_is_reported() {
    let sys = diag_system(0.5, 0.6, 2);
    let report = verify_certificate(&unit_box_cert(&sys, 1.0), &sys).unwrap();
    assert!(!report.valid);
    let violated: Vec<_> = report.violated().collect();
    assert_eq!(violated.len(), 4);
    assert!(violated.iter().all(|(kind, r)| *kind == "invariance" && (r.slack + 0.1).abs() < 1e-12));
}

#[test]
fn oversized_set_fails_safety() {
    let sys = diag_system(0.5, 0.0, 2);
    let report = verify_certificate(&unit_box_cert(&sys, 1.5), &sys).unwrap();
    assert!(!report.valid);
    assert!(report.safety.iter().all(|r| (r.slack + 0.5).abs() < 1e-12));
}

#[test]
fn tightenings_vanish_without_disturbance() {
    let sys = diag_system(0.5, 0.0, 2);
    let (lo, hi) = tighten(&unit_box_cert(&sys, 1.0), &sys).unwrap();
    assert!(lo.iter().chain(hi.iter()).all(|v| *v == 0.0));
    let mut sys = diag_system(0.5, 0.3, 2);
    sys.e = DMatrix::zeros(2, 2);
    let (lo, hi) = tighten(&unit_box_cert(&sys, 1.0), &sys).unwrap();
    assert!(lo.iter().chain(hi.iter()).all(|v| *v == 0.0));
}

#[test]
fn tightenings_match_disturbance_vertices() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let n = 3;
        let p = 2;
        let e = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let d = common::random_cset(&mut rng, p, 7);
        let sys = SafetySystem::new(
            DMatrix::identity(n, n) * 0.5,
            DMatrix::identity(n, n),
            e.clone(),
            HPolytope::unit_box(n),
            d.clone(),
            HPolytope::unit_box(n),
        )
        .unwrap();
        let vs = DMatrix::from_fn(4, n, |_, _| rng.random_range(-1.0..1.0));
        let cert = RciCertificate::new(vs.clone(), DVector::from_element(4, 1.0), DMatrix::zeros(n, n), &sys).unwrap();
        let (lo, hi) = tighten(&cert, &sys).unwrap();
        let dv = polytope_vertices(&d);
        for i in 0..4 {
            let vals: Vec<f64> = dv.iter().map(|v| (vs.row(i) * &e * v)[(0, 0)]).collect();
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            assert!((hi[i] - max).abs() < 1e-9 && (lo[i] - min).abs() < 1e-9);
            assert!(lo[i] <= 0.0 && hi[i] >= 0.0);
        }
    }
}

#[test]
fn identity_plant_action_set_at_origin() {
    let sys = diag_system(1.0, 0.0, 2);
    let cert = unit_box_cert(&sys, 1.0);
    let omega = safe_action_set(&cert, &sys, &DVector::zeros(2)).unwrap();
    // U = 5·box intersected with the unit box.
    let verts = polytope_vertices(&omega);
    assert_eq!(verts.len(), 4);
    assert!(verts.iter().all(|v| (v.amax() - 1.0).abs() < 1e-12));
    let shifted = shifted_safe_action_set(&cert, &sys, &DVector::zeros(2)).unwrap();
    assert_eq!(shifted, omega);
}

#[test]
fn states_outside_s_are_rejected() {
    let sys = diag_system(0.5, 0.1, 1);
    let cert = unit_box_cert(&sys, 1.0);
    assert!(matches!(safe_action_set(&cert, &sys, &DVector::from_element(1, 1.5)), Err(Error::StateOutsideS)));
    assert!(matches!(shifted_safe_action_set(&cert, &sys, &DVector::from_element(1, 1.0)), Err(Error::StateOnBoundary)));
}

#[test]
fn scalar_rpi_hand_computations() {
    let sys = diag_system(0.5, 0.4, 1);
    let r = max_rpi_for_gain(&sys, &DMatrix::zeros(1, 1), &RpiOptions::default()).unwrap();
    let verts = polytope_vertices(&r.set);
    let mut xs: Vec<f64> = verts.iter().map(|v| v[0]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!((xs[0] + 1.0).abs() < 1e-12 && (xs[1] - 1.0).abs() < 1e-12);

    // With K = 0 the box [−s, s] needs 0.9 s + 0.15 ≤ s, i.e. s ≥ 1.5, which
    // leaves X. The deadbeat gain K = −0.9 keeps all of X.
    let sys = SafetySystem::new(
        DMatrix::from_element(1, 1, 0.9),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        HPolytope::centered_box(&[5.0]).unwrap(),
        HPolytope::centered_box(&[0.15]).unwrap(),
        HPolytope::unit_box(1),
    )
    .unwrap();
    let slow = DMatrix::from_element(1, 1, 0.0);
    let fast = DMatrix::from_element(1, 1, -0.9);
    let res = gain_search(&sys, &[slow, fast], &RpiOptions::default()).unwrap();
    assert_eq!(res.best_index, 1);
    assert!((res.certificate.s_bar[0] - 1.0).abs() < 1e-12);
}

#[test]
fn nilpotent_loop_without_disturbance_stops_quickly() {
    let sys = SafetySystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        HPolytope::centered_box(&[5.0, 5.0]).unwrap(),
        HPolytope::centered_box(&[0.0, 0.0]).unwrap(),
        HPolytope::unit_box(2),
    )
    .unwrap();
    let r = max_rpi_for_gain(&sys, &DMatrix::zeros(2, 2), &RpiOptions::default()).unwrap();
    assert!(r.iterations <= 2 + 1);
    let verts = polytope_vertices(&r.set);
    assert!(verts.iter().all(|v| (v.amax() - 1.0).abs() < 1e-12));
}

#[test]
fn nine_bus_certificate_is_valid_and_stabilizing() {
    let nb = nine_bus();
    let report = verify_certificate(&nb.cert, &nb.system).unwrap();
    assert!(report.valid, "worst slack {}", report.worst());
    assert!(spectral_radius(&nb.system.closed_loop(&nb.cert.k)) < 1.0);
}

#[test]
fn nine_bus_one_step_invariance_by_vertices() {
    let nb = nine_bus();
    let sys = &nb.system;
    let sampler = UniformSampler::new(&nb.cert.s_set()).unwrap();
    let d_verts = box_vertices(&nb.case.d_bar.iter().copied().collect::<Vec<_>>());
    let s = nb.cert.s_set();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..40 {
        let x = sampler.sample(&mut rng);
        // Pruning only ever enlarges a wrongly pruned set, so it cannot hide failures.
        let omega = safe_action_set(&nb.cert, sys, &x).unwrap().remove_redundant(1e-9).unwrap();
        let u_verts = vertices(omega.lhs(), omega.rhs(), 1e-9);
        assert!(u_verts.len() >= 4);
        for u in &u_verts {
            for d in &d_verts {
                let next = sys.step(&x, u, d);
                assert!(s.max_violation(&next) <= 1e-8);
            }
        }
        let kx = &nb.cert.k * &x;
        assert!(contains(&omega, &kx, 1e-9).unwrap());
        let shifted = shifted_safe_action_set(&nb.cert, sys, &x).unwrap();
        assert!(is_cset(&shifted).unwrap());
        assert!(shifted.rhs().iter().all(|g| *g >= 1e-9));
    }
}

#[test]
fn certificate_file_roundtrip() {
    let nb = nine_bus();
    let text = serde_json::to_string(&CertificateFile::from_certificate(&nb.cert)).unwrap();
    let back: CertificateFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back.into_certificate(&nb.system).unwrap(), nb.cert);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_action_is_safe_for_random_interior_states(seed in any::<u64>()) {
        let nb = nine_bus();
        let sampler = UniformSampler::new(&nb.cert.s_set().scale(0.999).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sampler.sample(&mut rng);
        let omega = safe_action_set(&nb.cert, &nb.system, &x).unwrap();
        let kx = &nb.cert.k * &x;
        prop_assert!((omega.lhs() * &kx - omega.rhs()).max() < 0.0);
    }
}
