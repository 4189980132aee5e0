#![allow(dead_code)]

use std::sync::OnceLock;

use lanekeep::config::Config;
use lanekeep::optim::QpProblem;
use lanekeep::synthesis::{synthesize, SynthesisOptions, SynthesisOutput};
use nalgebra::{DMatrix, DVector};

/// Lane-keeping synthesis with the default configuration, computed once per
/// test binary.
pub fn lane_synthesis() -> &'static SynthesisOutput {
    static OUT: OnceLock<SynthesisOutput> = OnceLock::new();
    OUT.get_or_init(|| {
        let cfg = Config::default();
        let model = cfg.lateral_model().unwrap();
        let (q, r) = cfg.synthesis_weights();
        let opts = SynthesisOptions {
            rpi_max_iter: cfg.mpc.rpi_max_iter,
            validation_samples: 0,
            seed: 0,
        };
        synthesize(&model, &q, &r, &opts).unwrap()
    })
}

/// Brute-force QP oracle for strictly convex problems with inequalities
/// only: every subset of at most `n` rows is treated as active, the
/// equality-constrained minimizer is computed, and the best primal-feasible
/// candidate wins. The true optimum is one of the candidates and every
/// candidate is feasible, so the minimum is the optimum.
pub fn active_set_oracle(qp: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let n = qp.q.len();
    let m = qp.h.len();
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut subset = Vec::new();
    enumerate(0, m, n, &mut subset, &mut |rows| {
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&qp.q));
        for (r, &i) in rows.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = qp.g[(i, c)];
                kkt[(c, n + r)] = qp.g[(i, c)];
            }
            rhs[n + r] = qp.h[i];
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else { return };
        let x = sol.rows(0, n).into_owned();
        if (&qp.g * &x - &qp.h).max() > 1e-9 {
            return;
        }
        let f = 0.5 * x.dot(&(&qp.p * &x)) + qp.q.dot(&x);
        if best.as_ref().is_none_or(|(_, b)| f < *b) {
            best = Some((x, f));
        }
    });
    best
}

fn enumerate(start: usize, m: usize, max: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    f(cur);
    if cur.len() == max {
        return;
    }
    for i in start..m {
        cur.push(i);
        enumerate(i + 1, m, max, cur, f);
        cur.pop();
    }
}

/// Support value from an explicit point list.
pub fn support_of_points(points: &[DVector<f64>], d: &DVector<f64>) -> f64 {
    points.iter().map(|v| v.dot(d)).fold(f64::NEG_INFINITY, f64::max)
}

/// Strictly convex QP with `n` variables, box `|x_i| <= b_i` and `k` general
/// rows, feasible by construction around a random interior point.
pub fn random_qp(rng: &mut impl rand::Rng, n: usize, k: usize) -> QpProblem {
    let mut u = || -> f64 { rng.random_range(-1.0..1.0) };
    let m = DMatrix::from_fn(n, n, |_, _| u());
    let p = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
    let q = DVector::from_fn(n, |_, _| 3.0 * u());
    let bounds = DVector::from_fn(n, |_, _| 0.5 + u().abs());
    let x_feas = DVector::from_fn(n, |i, _| 0.5 * bounds[i] * u());
    let mut g = DMatrix::zeros(2 * n + k, n);
    let mut h = DVector::zeros(2 * n + k);
    for i in 0..n {
        g[(2 * i, i)] = 1.0;
        h[2 * i] = bounds[i];
        g[(2 * i + 1, i)] = -1.0;
        h[2 * i + 1] = bounds[i];
    }
    for r in 0..k {
        let row = DVector::from_fn(n, |_, _| u());
        for c in 0..n {
            g[(2 * n + r, c)] = row[c];
        }
        h[2 * n + r] = row.dot(&x_feas) + 0.3 * u().abs();
    }
    QpProblem::with_inequalities(p, q, g, h)
}
