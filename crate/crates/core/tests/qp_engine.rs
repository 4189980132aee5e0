mod common;

use lanekeep::optim::{solve_lp, solve_qp, QpProblem, QpStatus};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_qps_match_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..150 {
        let n = rng.random_range(1..=5);
        let k = rng.random_range(0..=3);
        let qp = common::random_qp(&mut rng, n, k);
        let sol = solve_qp(&qp).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
        let (x_ref, f_ref) = common::active_set_oracle(&qp).unwrap();
        assert!((sol.objective - f_ref).abs() <= 1e-6, "case {case}: {} vs {f_ref}", sol.objective);
        assert!((&sol.x - &x_ref).amax() <= 1e-5, "case {case}");
        assert!(sol.kkt.max() <= 1e-6, "case {case}: {:?}", sol.kkt);
    }
}

#[test]
fn degenerate_lp_vertex_still_solves() {
    // Four facets through the optimal vertex of a square pyramid; the
    // objective is orthogonal to an edge so the optimal face is not a point.
    let g = DMatrix::from_row_slice(
        6,
        3,
        &[1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0],
    );
    let h = DVector::from_row_slice(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.5]);
    let sol = solve_lp(&DVector::from_row_slice(&[0.0, 0.0, -1.0]), &g, &h).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.objective + 1.0).abs() < 1e-8);
}

#[test]
fn equality_and_inequality_mix_against_closed_form() {
    // min x'x  s.t. x1 + x2 + x3 = 3, x1 <= 0.5  ->  x = (0.5, 1.25, 1.25).
    let qp = QpProblem {
        p: DMatrix::identity(3, 3) * 2.0,
        q: DVector::zeros(3),
        g: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        h: DVector::from_element(1, 0.5),
        a: DMatrix::from_element(1, 3, 1.0),
        b: DVector::from_element(1, 3.0),
    };
    let sol = solve_qp(&qp).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((&sol.x - DVector::from_row_slice(&[0.5, 1.25, 1.25])).amax() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_solutions_satisfy_kkt(seed in any::<u64>(), n in 1usize..6, k in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = common::random_qp(&mut rng, n, k);
        let sol = solve_qp(&qp).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        let stat = &qp.p * &sol.x + &qp.q + qp.g.transpose() * &sol.z;
        prop_assert!(stat.amax() <= 1e-6);
        prop_assert!((&qp.g * &sol.x - &qp.h).max() <= 1e-6);
        prop_assert!(sol.z.min() >= -1e-9);
    }

    #[test]
    fn scaling_the_cost_keeps_the_argmin(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = common::random_qp(&mut rng, 3, 2);
        let mut scaled = qp.clone();
        scaled.p *= scale;
        scaled.q *= scale;
        let a = solve_qp(&qp).unwrap();
        let b = solve_qp(&scaled).unwrap();
        prop_assert!((&a.x - &b.x).amax() <= 1e-6);
    }

    #[test]
    fn lp_value_matches_vertex_maximum_on_boxes(lo in prop::collection::vec(-3.0f64..0.0, 3),
                                                width in prop::collection::vec(0.1f64..3.0, 3),
                                                c in prop::collection::vec(-1.0f64..1.0, 3)) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let mut g = DMatrix::zeros(6, 3);
        let mut h = DVector::zeros(6);
        for i in 0..3 {
            g[(2 * i, i)] = 1.0;
            h[2 * i] = hi[i];
            g[(2 * i + 1, i)] = -1.0;
            h[2 * i + 1] = -lo[i];
        }
        let c = DVector::from_vec(c);
        let sol = solve_lp(&c, &g, &h).unwrap();
        // min c'x over a box picks lo or hi per coordinate.
        let expected: f64 = (0..3).map(|i| (c[i] * lo[i]).min(c[i] * hi[i])).sum();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!((sol.objective - expected).abs() <= 1e-7);
    }
}
