//! Speed-tracking MPC on the longitudinal double integrator, condensed into
//! the accelerations `a_0 .. a_{N-1}`:
//!
//! ```text
//!     v_{i+1} = v_0 + t_s (a_0 + .. + a_i)
//!     min  Σ η (v_{i+1} - v_ref,i+1)² + ζ a_i²
//!     s.t. a_min <= a_i <= a_max,  v_min <= v_{i+1} <= v_max
//! ```
//!
//! Position never enters cost or constraints. The measured speed is a datum,
//! so only the predicted speeds `i = 1 .. N` are constrained.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::optim::qp::{solve_qp, QpProblem, QpStatus};
use crate::vehicle::LongitudinalModel;

#[derive(Debug, Clone)]
pub struct LongCommand {
    /// First optimal acceleration, m/s².
    pub a_cmd: f64,
    /// Predicted speeds `v_1 .. v_N`.
    pub v_pred: DVector<f64>,
    /// Full optimal acceleration sequence.
    pub a_seq: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
}

/// Condensed QP for measured speed `v`.
pub fn build_longitudinal_qp(
    v: f64,
    v_ref: &[f64],
    model: &LongitudinalModel,
    eta: f64,
    zeta: f64,
) -> Result<QpProblem> {
    let n = v_ref.len();
    if n == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    if !(eta > 0.0 && zeta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tuning constants must be positive, got eta = {eta}, zeta = {zeta}"
        )));
    }
    let ts = model.t_s;
    // v_pred = v 1 + L a with L lower-triangular ts.
    let l = DMatrix::from_fn(n, n, |r, c| if c <= r { ts } else { 0.0 });
    let e = DVector::from_fn(n, |i, _| v - v_ref[i]);
    let hess = (l.transpose() * &l * eta + DMatrix::identity(n, n) * zeta) * 2.0;
    let grad = l.transpose() * &e * (2.0 * eta);
    let mut g = DMatrix::zeros(4 * n, n);
    let mut h = DVector::zeros(4 * n);
    for i in 0..n {
        g[(i, i)] = 1.0;
        h[i] = model.a_max;
        g[(n + i, i)] = -1.0;
        h[n + i] = -model.a_min;
        g.row_mut(2 * n + i).copy_from(&l.row(i));
        h[2 * n + i] = model.v_max - v;
        g.row_mut(3 * n + i).copy_from(&(-l.row(i)));
        h[3 * n + i] = v - model.v_min;
    }
    Ok(QpProblem::with_inequalities(hess, grad, g, h))
}

/// Solves one step. A measured speed outside `[v_min, v_max]` is reported as
/// infeasible without calling the solver. The position `_s` is part of the
/// plant state but enters neither cost nor constraints.
pub fn solve_longitudinal_step(
    _s: f64,
    v: f64,
    v_ref: &[f64],
    model: &LongitudinalModel,
    eta: f64,
    zeta: f64,
) -> Result<LongCommand> {
    let n = v_ref.len();
    let qp = build_longitudinal_qp(v, v_ref, model, eta, zeta)?;
    if !(v >= model.v_min && v <= model.v_max) {
        log::warn!("longitudinal: speed {v} outside [{}, {}]", model.v_min, model.v_max);
        return Ok(LongCommand {
            a_cmd: 0.0,
            v_pred: DVector::from_element(n, v),
            a_seq: DVector::zeros(n),
            objective: f64::NAN,
            status: QpStatus::Infeasible,
        });
    }
    let sol = solve_qp(&qp)?;
    // Clip the interior-point residue back onto the boxes.
    let a_seq = sol.x.map(|a| a.clamp(model.a_min, model.a_max));
    let mut v_pred = DVector::zeros(n);
    let mut vi = v;
    for i in 0..n {
        vi += model.t_s * a_seq[i];
        v_pred[i] = vi;
    }
    let constant: f64 = v_ref.iter().map(|r| eta * (v - r).powi(2)).sum();
    Ok(LongCommand {
        a_cmd: a_seq[0],
        v_pred,
        a_seq,
        objective: sol.objective + constant,
        status: sol.status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::build_longitudinal;

    fn model() -> LongitudinalModel {
        build_longitudinal(0.1, 15.0, 30.0, -6.0, 2.0).unwrap()
    }

    #[test]
    fn on_reference_holds_speed() {
        let c = solve_longitudinal_step(0.0, 20.0, &[20.0; 5], &model(), 100.0, 0.1).unwrap();
        assert_eq!(c.status, QpStatus::Optimal);
        assert!(c.a_cmd.abs() < 1e-8);
        assert!(c.v_pred.iter().all(|v| (v - 20.0).abs() < 1e-8));
        assert!(c.objective.abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_tuning_and_flags_speed_out_of_box() {
        assert!(solve_longitudinal_step(0.0, 20.0, &[20.0; 5], &model(), 0.0, 0.1).is_err());
        let c = solve_longitudinal_step(0.0, 31.0, &[20.0; 5], &model(), 100.0, 0.1).unwrap();
        assert_eq!(c.status, QpStatus::Infeasible);
    }
}
