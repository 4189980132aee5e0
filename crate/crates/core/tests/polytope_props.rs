mod common;

use lanekeep::polytope::{HPolytope, Support, VPolytope};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)))
        .collect()
}

/// Random bounded polytope: the cube cut by random halfspaces that keep the
/// origin strictly inside.
fn random_h(rng: &mut ChaCha8Rng, dim: usize) -> HPolytope {
    let extra = rng.random_range(1..=dim + 3);
    let rows = 2 * dim + extra;
    let mut g = DMatrix::zeros(rows, dim);
    let mut h = DVector::zeros(rows);
    for i in 0..dim {
        g[(2 * i, i)] = 1.0;
        g[(2 * i + 1, i)] = -1.0;
        h[2 * i] = rng.random_range(0.5..2.0);
        h[2 * i + 1] = rng.random_range(0.5..2.0);
    }
    for r in 2 * dim..rows {
        for c in 0..dim {
            g[(r, c)] = rng.random_range(-1.0..1.0);
        }
        h[r] = rng.random_range(0.3..1.0);
    }
    HPolytope::new(g, h).unwrap()
}

#[test]
fn h_to_v_to_h_preserves_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..60 {
        let dim = 2 + case % 3;
        let h = random_h(&mut rng, dim);
        let v = h.vertex_enumeration().unwrap();
        for x in v.vertices() {
            assert!(h.contains(x, 1e-9), "case {case}: vertex outside");
        }
        let back = v.halfspace_conversion().unwrap();
        for _ in 0..500 {
            let x = DVector::from_fn(dim, |_, _| rng.random_range(-2.2..2.2));
            let margin = -h.normalized().unwrap().max_violation(&x);
            if margin.abs() < 1e-7 {
                continue;
            }
            assert_eq!(h.contains(&x, 0.0), back.contains(&x, 0.0), "case {case}: {x}");
        }
    }
}

#[test]
fn support_by_lp_equals_support_by_vertices() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let dim = rng.random_range(2..=4);
        let h = random_h(&mut rng, dim);
        let v = h.vertex_enumeration().unwrap();
        for _ in 0..10 {
            let d = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let by_lp = h.support_lp(&d).unwrap();
            let by_vertices = common::support_of_points(v.vertices(), &d);
            assert!((by_lp - by_vertices).abs() <= 1e-8 * (1.0 + by_lp.abs()));
        }
    }
}

#[test]
fn minkowski_support_adds() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..40 {
        let dim = rng.random_range(2..=4);
        let a = VPolytope::new(dim, random_points(&mut rng, dim, 6)).unwrap();
        let b = VPolytope::new(dim, random_points(&mut rng, dim, 5)).unwrap();
        let sum = a.minkowski_sum(&b).unwrap();
        for _ in 0..20 {
            let d = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let lhs = sum.support(&d).unwrap();
            let rhs = common::support_of_points(a.vertices(), &d) + common::support_of_points(b.vertices(), &d);
            assert!((lhs - rhs).abs() <= 1e-8, "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn hull_of_a_point_cloud_contains_every_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for dim in 2..=4 {
        let pts = random_points(&mut rng, dim, 25);
        let h = VPolytope::new(dim, pts.clone()).unwrap().halfspace_conversion().unwrap();
        for p in &pts {
            assert!(h.contains(p, 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affine_image_support_identity(seed in any::<u64>(), dim in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = VPolytope::new(dim, random_points(&mut rng, dim, 8)).unwrap();
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let t = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let img = p.affine_image(&m, &t).unwrap();
        prop_assert!(img.len() <= p.len());
        let d = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        // h_{MP+t}(d) = h_P(M'd) + d't
        let lhs = img.support(&d).unwrap();
        let rhs = common::support_of_points(p.vertices(), &(m.transpose() * &d)) + d.dot(&t);
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }

    #[test]
    fn scaling_and_translation_move_the_support(seed in any::<u64>(), alpha in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_h(&mut rng, 3);
        let d = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let t = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let base = h.support_lp(&d).unwrap();
        prop_assert!((h.scaled(alpha).support_lp(&d).unwrap() - alpha * base).abs() <= 1e-7);
        prop_assert!((h.translated(&t).support_lp(&d).unwrap() - base - d.dot(&t)).abs() <= 1e-7);
    }

    #[test]
    fn redundancy_removal_keeps_the_set(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_h(&mut rng, 3);
        let slack = h.scaled(1.5);
        let both = h.intersect(&slack).unwrap();
        let reduced = both.remove_redundant().unwrap();
        prop_assert!(reduced.n_rows() <= h.n_rows());
        for _ in 0..100 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-2.2..2.2));
            if h.normalized().unwrap().max_violation(&x).abs() < 1e-7 {
                continue;
            }
            prop_assert_eq!(h.contains(&x, 0.0), reduced.contains(&x, 0.0));
        }
    }
}
