mod common;

use common::{bisection_gauge, jacobian_fd, max_over_vertices, polytope_vertices, random_cset, random_unit_ball};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safegauge::polytope::{
    contains, gauge_function, gauge_map, gauge_map_general, gauge_map_inverse, gauge_map_jacobian, is_cset, support, translate,
    HPolytope,
};

fn is_tie(q: &HPolytope, v: &DVector<f64>) -> bool {
    let mut inf = v.iter().map(|c| c.abs()).collect::<Vec<_>>();
    inf.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut ratios: Vec<f64> = (0..q.num_rows()).map(|i| q.lhs().row(i).dot(&v.transpose()) / q.rhs()[i]).collect();
    ratios.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let gap = |s: &[f64]| s.len() > 1 && (s[0] - s[1]).abs() <= 1e-4 * s[0].abs().max(1e-12);
    gap(&inf) || gap(&ratios)
}

#[test]
fn unit_box_membership_and_cset() {
    let b = HPolytope::unit_box(2);
    assert!(contains(&b, &DVector::zeros(2), 1e-9).unwrap());
    assert!(!contains(&b, &DVector::from_vec(vec![1.0 + 2e-9, 0.0]), 1e-9).unwrap());
    assert!(is_cset(&b).unwrap());
    let half = HPolytope::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![1.0])).unwrap();
    assert!(!is_cset(&half).unwrap());
    let corner = translate(&b, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
    assert!(!is_cset(&corner).unwrap());
}

#[test]
fn box_gauges_are_scaled_inf_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b1 = HPolytope::unit_box(3);
    let b2 = HPolytope::centered_box(&[2.0, 2.0, 2.0]).unwrap();
    for _ in 0..100 {
        let v = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
        assert!((gauge_function(&b1, &v).unwrap().value - v.amax()).abs() < 1e-15);
        assert!((gauge_function(&b2, &v).unwrap().value - v.amax() / 2.0).abs() < 1e-15);
        let u = random_unit_ball(&mut rng, 3);
        assert!((gauge_map(&u, &b1).unwrap() - &u).amax() < 1e-15);
        assert!((gauge_map(&u, &b2).unwrap() - &u * 2.0).amax() < 1e-15);
        if !is_tie(&b1, &u) {
            assert!((gauge_map_jacobian(&u, &b1).unwrap() - DMatrix::identity(3, 3)).amax() < 1e-14);
            assert!((gauge_map_jacobian(&u, &b2).unwrap() - DMatrix::identity(3, 3) * 2.0).amax() < 1e-14);
        }
    }
}

#[test]
fn gauge_at_zero_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random_cset(&mut rng, 3, 10);
    assert_eq!(gauge_map(&DVector::zeros(3), &q).unwrap(), DVector::zeros(3));
    assert_eq!(gauge_function(&q, &DVector::zeros(3)).unwrap().value, 0.0);
}

#[test]
fn support_matches_vertices() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let m = rng.random_range(2..=3);
        let rows = rng.random_range(2 * m..=12);
        let q = random_cset(&mut rng, m, rows);
        let verts = polytope_vertices(&q);
        let a = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let oracle = max_over_vertices(&a, &verts);
        assert!((support(&q, &a).unwrap() - oracle).abs() < 1e-8);
        assert_eq!(support(&q, &DVector::zeros(m)).unwrap(), 0.0);
    }
    assert!((support(&HPolytope::unit_box(3), &DVector::from_vec(vec![1.0, -2.0, 0.5])).unwrap() - 3.5).abs() < 1e-12);
}

#[test]
fn gauge_map_is_injective_on_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = random_cset(&mut rng, 2, 9);
    let pts: Vec<DVector<f64>> = (0..1000).map(|_| random_unit_ball(&mut rng, 2)).collect();
    let imgs: Vec<DVector<f64>> = pts.iter().map(|v| gauge_map(v, &q).unwrap()).collect();
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            if (&pts[i] - &pts[j]).amax() > 1e-12 {
                assert!((&imgs[i] - &imgs[j]).amax() > 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gauge_matches_bisection(seed in any::<u64>(), m in 1usize..=4, extra in 0usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_cset(&mut rng, m, 2 * m + extra);
        let v = DVector::from_fn(m, |_, _| rng.random_range(-4.0..4.0));
        let g = gauge_function(&q, &v).unwrap().value;
        prop_assert!((g - bisection_gauge(&q, &v)).abs() <= 1e-9 * (1.0 + g));
        let lam = rng.random_range(0.0..5.0);
        prop_assert!((gauge_function(&q, &(&v * lam)).unwrap().value - lam * g).abs() <= 1e-10 * (1.0 + lam * g));
    }

    #[test]
    fn gauge_map_direction_and_level(seed in any::<u64>(), m in 1usize..=4, extra in 0usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_cset(&mut rng, m, 2 * m + extra);
        let v = random_unit_ball(&mut rng, m);
        let w = gauge_map(&v, &q).unwrap();
        prop_assert!((gauge_function(&q, &w).unwrap().value - v.amax()).abs() <= 1e-9);
        // Same direction: w = t v with t > 0.
        let t = w.dot(&v) / v.dot(&v);
        prop_assert!(t > 0.0);
        prop_assert!((&w - &v * t).amax() <= 1e-9 * (1.0 + w.amax()));
        // Boundary to boundary.
        let vb = &v / v.amax();
        prop_assert!((gauge_function(&q, &gauge_map(&vb, &q).unwrap()).unwrap().value - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn general_gauge_map_roundtrips(seed in any::<u64>(), m in 1usize..=4, extra in 0usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_cset(&mut rng, m, 2 * m + extra);
        let q = random_cset(&mut rng, m, 2 * m + extra);
        let dir = random_unit_ball(&mut rng, m);
        let level = rng.random_range(0.0..1.0);
        let v = gauge_map(&dir, &p).unwrap() * level;
        let w = gauge_map_general(&v, &p, &q).unwrap();
        prop_assert!(contains(&q, &w, 1e-9).unwrap());
        let back = gauge_map_general(&w, &q, &p).unwrap();
        prop_assert!((back - &v).amax() <= 1e-8);
        let boxed = gauge_map_general(&dir, &HPolytope::unit_box(m), &q).unwrap();
        prop_assert!((boxed - gauge_map(&dir, &q).unwrap()).amax() <= 1e-12);
        prop_assert!((gauge_map_general(&v, &p, &p).unwrap() - &v).amax() <= 1e-12);
        let inv = gauge_map_inverse(&gauge_map(&dir, &q).unwrap(), &q).unwrap();
        prop_assert!((inv - &dir).amax() <= 1e-9);
    }

    #[test]
    fn jacobian_matches_central_differences(seed in any::<u64>(), m in 1usize..=4, extra in 0usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_cset(&mut rng, m, 2 * m + extra);
        let v = random_unit_ball(&mut rng, m) * 0.9;
        prop_assume!(!is_tie(&q, &v));
        let jac = gauge_map_jacobian(&v, &q).unwrap();
        let fd = jacobian_fd(|y| gauge_map(y, &q).unwrap(), &v, 1e-6);
        let err = (&jac - &fd).norm() / jac.norm().max(1e-12);
        prop_assert!(err <= 1e-5, "relative error {}", err);
    }

    #[test]
    fn translation_shifts_membership(seed in any::<u64>(), m in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_cset(&mut rng, m, 2 * m + 4);
        let c = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let x = DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0));
        let t = translate(&p, &c).unwrap();
        prop_assert_eq!(contains(&p, &x, 0.0).unwrap(), contains(&t, &(&x - &c), 0.0).unwrap());
        prop_assert_eq!(translate(&p, &DVector::zeros(m)).unwrap(), p.clone());
        let direct = (p.lhs() * &x - p.rhs()).iter().all(|s| *s <= 1e-9);
        prop_assert_eq!(contains(&p, &x, 1e-9).unwrap(), direct);
    }
}
