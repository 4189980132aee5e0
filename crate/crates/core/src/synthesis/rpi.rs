//! Maximal robust positively invariant set of the gain-scheduled closed loop.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gains::GainSchedule;
use crate::error::{Error, Result};
use crate::polytope::{HPolytope, VPolytope};
use crate::vehicle::LpvModel;

/// Convergence tolerance of the pre-set iteration.
pub const RPI_TOL: f64 = 1e-8;
/// Membership tolerance used by the invariance check.
pub const INVARIANCE_TOL: f64 = 1e-9;

/// The invariant set in both representations.
#[derive(Debug, Clone, PartialEq)]
pub struct RpiSet {
    pub h: HPolytope,
    pub v: VPolytope,
    pub iterations_used: usize,
}

impl RpiSet {
    /// Builds the set from its H-representation (rows normalized, redundancy removed).
    pub fn from_h(h: HPolytope, iterations_used: usize) -> Result<Self> {
        let h = h.remove_redundant()?;
        let v = h.vertex_enumeration()?;
        Ok(Self {
            h,
            v,
            iterations_used,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.v.len()
    }

    pub fn n_facets(&self) -> usize {
        self.h.n_rows()
    }
}

/// Largest `max_i (g_i . w)` over the vertices of `W`, per row of `g`.
fn row_supports(g: &DMatrix<f64>, w_vertices: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_fn(g.nrows(), |i, _| {
        w_vertices
            .iter()
            .map(|w| g.row(i).dot(&w.transpose()))
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Pre-set iteration `S_{t+1} = S_t ∩ {x : G_S M_j x <= h_S - h_W(G_S)}` for
/// closed-loop vertex matrices `m_j`, starting from `s0`.
///
/// Stops as soon as every new row is implied by `S_t` within `tol`, in which
/// case `S_t` is returned.
pub fn max_rpi(
    closed_loop: &[DMatrix<f64>],
    s0: &HPolytope,
    w_vertices: &[DVector<f64>],
    max_iter: usize,
    tol: f64,
) -> Result<RpiSet> {
    let mut s = s0.remove_redundant().map_err(empty_as_invariant_error)?;
    for iter in 0..max_iter {
        let verts = s.vertex_enumeration().map_err(empty_as_invariant_error)?;
        let tighten = row_supports(s.g(), w_vertices);
        let rhs = s.h() - &tighten;
        let mut new_rows: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
        let mut implied = true;
        for m in closed_loop {
            let g = s.g() * m;
            for i in 0..g.nrows() {
                let worst = verts
                    .vertices()
                    .iter()
                    .map(|x| g.row(i).dot(&x.transpose()))
                    .fold(f64::NEG_INFINITY, f64::max);
                let scale = g.row(i).norm().max(1e-12);
                if (worst - rhs[i]) / scale > tol {
                    implied = false;
                }
            }
            new_rows.push((g, rhs.clone()));
        }
        log::debug!(
            "rpi iteration {iter}: {} facets, {} vertices",
            s.n_rows(),
            verts.len()
        );
        // Vertex test passed; confirm with one LP per row before stopping.
        if implied {
            for (g, h) in &new_rows {
                for i in 0..g.nrows() {
                    let dir = g.row(i).transpose();
                    let scale = dir.norm().max(1e-12);
                    if (s.support_lp(&dir)? - h[i]) / scale > tol {
                        implied = false;
                    }
                }
            }
        }
        if implied {
            return Ok(RpiSet {
                h: s,
                v: verts,
                iterations_used: iter,
            });
        }
        let mut next = s.clone();
        for (g, h) in new_rows {
            next = next.intersect(&HPolytope::new(g, h)?)?;
        }
        s = next.remove_redundant().map_err(empty_as_invariant_error)?;
    }
    Err(Error::RpiNotConverged {
        iterations: max_iter,
        last: Box::new(s),
    })
}

fn empty_as_invariant_error(e: Error) -> Error {
    match e {
        Error::EmptyPolytope => Error::EmptyInvariantSet,
        other => other,
    }
}

/// Maximal RPI set of `x+ = (A(p) + B K(p)) x + w` inside the state
/// constraints, with the input constraints imposed through both vertex gains.
pub fn compute_rpi(model: &LpvModel, gains: &GainSchedule, max_iter: usize) -> Result<RpiSet> {
    let [a1, a2] = model.vertex_matrices();
    let cl = [&a1 + &model.b * &gains.k1, &a2 + &model.b * &gains.k2];
    let mut s0 = model.x.clone();
    for k in [&gains.k1, &gains.k2] {
        let gu = HPolytope::new(model.u.g() * k, model.u.h().clone())?;
        s0 = s0.intersect(&gu)?;
    }
    let w_vertices = model.w.vertex_enumeration()?;
    max_rpi(&cl, &s0, w_vertices.vertices(), max_iter, RPI_TOL)
}

/// One failed invariance sample.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub x: DVector<f64>,
    pub p: f64,
    pub w: DVector<f64>,
    pub violation: f64,
}

#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub n_samples: usize,
    /// Successor states checked (several disturbances per sample).
    pub n_checks: usize,
    /// `min (h - G x+)` over every check; negative means outside.
    pub worst_margin: f64,
    pub violations: usize,
    pub counterexamples: Vec<Counterexample>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Monte-Carlo check of the invariance definition: states uniform in `S`
/// (rejection from the bounding box), `p` uniform in its range, `w` at every
/// vertex of `W` plus one uniform draw.
pub fn validate_invariance(
    set: &RpiSet,
    model: &LpvModel,
    gains: &GainSchedule,
    n_samples: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    let mut report = InvarianceReport {
        n_samples,
        n_checks: 0,
        worst_margin: f64::INFINITY,
        violations: 0,
        counterexamples: Vec::new(),
    };
    if n_samples == 0 {
        return Ok(report);
    }
    if set.v.is_empty() {
        return Err(Error::EmptyPolytope);
    }
    let h = set.h.normalized()?;
    let w_verts = model.w.vertex_enumeration()?;
    let (w_lo, w_hi) = w_verts.bounding_box();
    let (lo, hi) = set.v.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, lo: &DVector<f64>, hi: &DVector<f64>| {
        DVector::from_fn(lo.len(), |i, _| {
            if hi[i] > lo[i] {
                rng.random_range(lo[i]..=hi[i])
            } else {
                lo[i]
            }
        })
    };

    let mut accepted = 0;
    let mut draws: u64 = 0;
    while accepted < n_samples {
        draws += 1;
        if draws > 10_000 * n_samples as u64 + 1_000_000 {
            return Err(Error::Solver("rejection sampling made no progress".into()));
        }
        let x = uniform(&mut rng, &lo, &hi);
        if !h.contains(&x, 0.0) {
            continue;
        }
        accepted += 1;
        let p = rng.random_range(model.p_min..=model.p_max);
        let k = gains.interpolate(p).k;
        let xn = (model.a(p) + &model.b * k) * &x;
        let mut ws: Vec<DVector<f64>> = w_verts.vertices().to_vec();
        ws.push(uniform(&mut rng, &w_lo, &w_hi));
        for w in ws {
            let next = &xn + &w;
            let violation = h.max_violation(&next);
            report.n_checks += 1;
            report.worst_margin = report.worst_margin.min(-violation);
            if violation > INVARIANCE_TOL {
                report.violations += 1;
                if report.counterexamples.len() < 10 {
                    report.counterexamples.push(Counterexample {
                        x: x.clone(),
                        p,
                        w,
                        violation,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn scalar_system_keeps_the_box() {
        let s0 = HPolytope::from_box(&[-1.0], &[1.0]).unwrap();
        let w = [dvector![-0.25], dvector![0.25]];
        let set = max_rpi(&[dmatrix![0.5]], &s0, &w, 10, RPI_TOL).unwrap();
        let (lo, hi) = set.v.bounding_box();
        assert!((lo[0] + 1.0).abs() < 1e-12 && (hi[0] - 1.0).abs() < 1e-12);
        assert_eq!(set.iterations_used, 0);
    }

    #[test]
    fn contraction_without_disturbance_returns_start_set() {
        let s0 = HPolytope::symmetric_box(&[1.0, 2.0]).unwrap();
        let m = DMatrix::identity(2, 2) * 0.5;
        let set = max_rpi(&[m], &s0, &[dvector![0.0, 0.0]], 5, RPI_TOL).unwrap();
        assert_eq!(set.v.len(), 4);
        assert_eq!(set.iterations_used, 0);
    }

    #[test]
    fn rotation_cuts_the_box_to_an_invariant_set() {
        // 45 degree rotation scaled by 0.9 does not keep the unit box.
        let c = 0.9 * std::f64::consts::FRAC_1_SQRT_2;
        let m = dmatrix![c, -c; c, c];
        let s0 = HPolytope::symmetric_box(&[1.0, 1.0]).unwrap();
        let set = max_rpi(&[m.clone()], &s0, &[dvector![0.0, 0.0]], 50, RPI_TOL).unwrap();
        assert!(set.iterations_used >= 1);
        for v in set.v.vertices() {
            assert!(set.h.contains(&(&m * v), 1e-9));
        }
    }

    #[test]
    fn too_large_disturbance_empties_the_set() {
        let s0 = HPolytope::from_box(&[-1.0], &[1.0]).unwrap();
        let w = [dvector![-0.8], dvector![0.8]];
        let err = max_rpi(&[dmatrix![0.5]], &s0, &w, 10, RPI_TOL).unwrap_err();
        assert!(matches!(err, Error::EmptyInvariantSet), "{err:?}");
    }

    #[test]
    fn unstable_loop_hits_iteration_cap() {
        let s0 = HPolytope::from_box(&[-1.0], &[1.0]).unwrap();
        let w = [dvector![0.0]];
        // Pure growth shrinks the set geometrically toward {0}.
        let err = max_rpi(&[dmatrix![1.5]], &s0, &w, 3, RPI_TOL).unwrap_err();
        assert!(matches!(err, Error::RpiNotConverged { iterations: 3, .. }));
    }
}
