//! Lateral error dynamics in LPV form (scheduled by inverse speed) and the
//! longitudinal double integrator, both discretized with forward Euler.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::polytope::HPolytope;

/// Physical vehicle parameters (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Front cornering stiffness, N/rad.
    pub c_af: f64,
    /// Rear cornering stiffness, N/rad.
    pub c_ar: f64,
    /// CoG to front axle, m.
    pub l_f: f64,
    /// CoG to rear axle, m.
    pub l_r: f64,
    /// Yaw inertia, kg m^2.
    pub i_z: f64,
    /// Mass, kg.
    pub m: f64,
    pub lane_width: f64,
    pub vehicle_width: f64,
    /// Sampling time, s.
    pub t_s: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            c_af: 153_000.0,
            c_ar: 191_000.0,
            l_f: 1.3,
            l_r: 1.7,
            i_z: 5250.0,
            m: 2500.0,
            lane_width: 10.0,
            vehicle_width: 2.0,
            t_s: 0.1,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_af", self.c_af),
            ("c_ar", self.c_ar),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("i_z", self.i_z),
            ("m", self.m),
            ("lane_width", self.lane_width),
            ("vehicle_width", self.vehicle_width),
            ("t_s", self.t_s),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.vehicle_width >= self.lane_width {
            return Err(Error::InvalidParameter("vehicle wider than lane".into()));
        }
        Ok(())
    }

    /// Largest admissible lateral offset of the CoG from the centerline.
    pub fn e_y_max(&self) -> f64 {
        self.lane_width / 2.0 - self.vehicle_width / 2.0
    }

    /// Input column of the continuous lateral model.
    pub fn input_column(&self) -> [f64; 4] {
        [0.0, 2.0 * self.c_af / self.m, 0.0, 2.0 * self.c_af * self.l_f / self.i_z]
    }
}

/// Coefficients of the continuous lateral error model at one speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

pub fn lateral_coefficients(params: &VehicleParams, v: f64) -> Result<LateralCoefficients> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidParameter(format!("speed must be positive, got {v}")));
    }
    let VehicleParams { c_af, c_ar, l_f, l_r, i_z, m, .. } = *params;
    let sum = 2.0 * c_af + 2.0 * c_ar;
    let moment = 2.0 * c_af * l_f - 2.0 * c_ar * l_r;
    let inertia = 2.0 * c_af * l_f * l_f + 2.0 * c_ar * l_r * l_r;
    Ok(LateralCoefficients {
        a: -sum / (m * v),
        b: sum / m,
        c: -moment / (m * v),
        d: -moment / (i_z * v),
        e: moment / i_z,
        f: -inertia / (i_z * v),
        g: -moment / (m * v) - v,
        h: -inertia / (i_z * v),
    })
}

/// Continuous-time state matrix of the lateral error model at speed `v`.
pub fn continuous_state_matrix(params: &VehicleParams, v: f64) -> Result<DMatrix<f64>> {
    let k = lateral_coefficients(params, v)?;
    Ok(DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0, //
            0.0, k.a, k.b, k.c, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, k.d, k.e, k.f,
        ],
    ))
}

/// Box limits on the lateral states and steering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateralLimits {
    /// Bound on the lateral-offset rate, m/s.
    pub e_y_rate_max: f64,
    /// Bound on the heading error, rad.
    pub e_psi_max: f64,
    /// Bound on the heading-error rate, rad/s.
    pub e_psi_rate_max: f64,
    /// Steering limit, rad.
    pub delta_max: f64,
}

impl LateralLimits {
    pub fn table_defaults(t_s: f64) -> Self {
        Self {
            e_y_rate_max: 10.0,
            e_psi_max: std::f64::consts::PI / 2.0,
            e_psi_rate_max: std::f64::consts::PI / (3.0 * t_s),
            delta_max: 0.5,
        }
    }
}

/// Discrete LPV system `x+ = (A0 + A1 p) x + B u + w` with its constraint sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LpvModel {
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub p_min: f64,
    pub p_max: f64,
    /// Additive disturbance set.
    pub w: HPolytope,
    /// State constraints.
    pub x: HPolytope,
    /// Input constraints.
    pub u: HPolytope,
}

impl LpvModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a0: DMatrix<f64>,
        a1: DMatrix<f64>,
        b: DMatrix<f64>,
        p_min: f64,
        p_max: f64,
        w: HPolytope,
        x: HPolytope,
        u: HPolytope,
    ) -> Result<Self> {
        let nx = a0.nrows();
        let shape_ok = a0.ncols() == nx
            && a1.shape() == (nx, nx)
            && b.nrows() == nx
            && w.dim() == nx
            && x.dim() == nx
            && u.dim() == b.ncols();
        if !shape_ok {
            return Err(Error::InvalidParameter("inconsistent model dimensions".into()));
        }
        if !(p_min < p_max) {
            return Err(Error::InvalidParameter(format!(
                "scheduling bounds must satisfy p_min < p_max, got [{p_min}, {p_max}]"
            )));
        }
        if !w.contains(&DVector::zeros(nx), 0.0) {
            return Err(Error::InvalidParameter("disturbance set must contain the origin".into()));
        }
        Ok(Self { a0, a1, b, p_min, p_max, w, x, u })
    }

    pub fn nx(&self) -> usize {
        self.a0.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    /// `A(p) = A0 + A1 p`.
    pub fn a(&self, p: f64) -> DMatrix<f64> {
        &self.a0 + &self.a1 * p
    }

    /// State matrices at the two scheduling vertices.
    pub fn vertex_matrices(&self) -> [DMatrix<f64>; 2] {
        [self.a(self.p_min), self.a(self.p_max)]
    }

    /// SHA-256 over the little-endian bytes of every model matrix and set.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut put = |tag: &str, vals: &mut dyn Iterator<Item = f64>| {
            hasher.update(tag.as_bytes());
            for v in vals {
                hasher.update(v.to_le_bytes());
            }
        };
        let dims = [self.nx() as f64, self.nu() as f64];
        put("dims", &mut dims.into_iter());
        // Row-major traversal.
        put("a0", &mut self.a0.transpose().iter().copied());
        put("a1", &mut self.a1.transpose().iter().copied());
        put("b", &mut self.b.transpose().iter().copied());
        put("p", &mut [self.p_min, self.p_max].into_iter());
        for (tag, set) in [("w", &self.w), ("x", &self.x), ("u", &self.u)] {
            put(tag, &mut set.g().transpose().iter().copied());
            put(tag, &mut set.h().iter().copied());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Euler-discretized lateral LPV model with `p = 1/v`.
pub fn build_lateral_lpv(
    params: &VehicleParams,
    limits: &LateralLimits,
    v_min: f64,
    v_max: f64,
    d_min: &[f64; 4],
    d_max: &[f64; 4],
) -> Result<LpvModel> {
    params.validate()?;
    if !(v_min > 0.0 && v_min < v_max) {
        return Err(Error::InvalidParameter(format!(
            "speed bounds must satisfy 0 < v_min < v_max, got [{v_min}, {v_max}]"
        )));
    }
    let lims = [
        ("e_y_rate_max", limits.e_y_rate_max),
        ("e_psi_max", limits.e_psi_max),
        ("e_psi_rate_max", limits.e_psi_rate_max),
        ("delta_max", limits.delta_max),
    ];
    for (name, v) in lims {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    if d_min.iter().zip(d_max).any(|(lo, hi)| !(lo <= &0.0 && hi >= &0.0)) {
        return Err(Error::InvalidParameter("disturbance bounds must bracket zero".into()));
    }
    let ts = params.t_s;
    // Speed-independent part and the 1/v part of the continuous matrix.
    let k1 = lateral_coefficients(params, 1.0)?;
    let mut a0 = DMatrix::identity(4, 4);
    a0[(0, 1)] += ts;
    a0[(1, 2)] += ts * k1.b;
    a0[(2, 3)] += ts;
    a0[(3, 2)] += ts * k1.e;
    let mut a1 = DMatrix::zeros(4, 4);
    a1[(1, 1)] = ts * k1.a;
    a1[(1, 3)] = ts * k1.c;
    a1[(3, 1)] = ts * k1.d;
    a1[(3, 3)] = ts * k1.f;
    let col = params.input_column();
    let b = DMatrix::from_column_slice(4, 1, &col.map(|v| v * ts));

    let x = HPolytope::symmetric_box(&[
        params.e_y_max(),
        limits.e_y_rate_max,
        limits.e_psi_max,
        limits.e_psi_rate_max,
    ])?;
    let u = HPolytope::symmetric_box(&[limits.delta_max])?;
    let w = HPolytope::from_box(d_min, d_max)?;
    LpvModel::new(a0, a1, b, 1.0 / v_max, 1.0 / v_min, w, x, u)
}

/// `[s; v]+ = [[1, t_s], [0, 1]] [s; v] + [0; t_s] a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalModel {
    pub ad: Matrix2<f64>,
    pub bd: Vector2<f64>,
    pub t_s: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl LongitudinalModel {
    /// Exact one-step update.
    pub fn step(&self, s: f64, v: f64, a: f64) -> (f64, f64) {
        let next = self.ad * Vector2::new(s, v) + self.bd * a;
        (next[0], next[1])
    }
}

pub fn build_longitudinal(t_s: f64, v_min: f64, v_max: f64, a_min: f64, a_max: f64) -> Result<LongitudinalModel> {
    if !(t_s.is_finite() && t_s > 0.0) {
        return Err(Error::InvalidParameter(format!("t_s must be positive, got {t_s}")));
    }
    if !(v_min < v_max) {
        return Err(Error::InvalidParameter("v_min must be below v_max".into()));
    }
    if !(a_min < 0.0 && 0.0 < a_max) {
        return Err(Error::InvalidParameter("acceleration bounds must bracket zero".into()));
    }
    Ok(LongitudinalModel {
        ad: Matrix2::new(1.0, t_s, 0.0, 1.0),
        bd: Vector2::new(0.0, t_s),
        t_s,
        v_min,
        v_max,
        a_min,
        a_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table_model() -> LpvModel {
        let p = VehicleParams::default();
        build_lateral_lpv(&p, &LateralLimits::table_defaults(p.t_s), 15.0, 30.0, &[-1e-2; 4], &[1e-2; 4]).unwrap()
    }

    #[test]
    fn coefficient_values() {
        let p = VehicleParams::default();
        let k = lateral_coefficients(&p, 25.0).unwrap();
        // -(2*153000 + 2*191000) / (2500*25)
        assert_relative_eq!(k.a, -11.008, epsilon = 1e-12);
        for v in [5.0, 15.0, 40.0] {
            assert_relative_eq!(lateral_coefficients(&p, v).unwrap().b, 275.2, epsilon = 1e-12);
        }
        let k2 = lateral_coefficients(&p, 50.0).unwrap();
        assert_relative_eq!(k2.a, k.a / 2.0, epsilon = 1e-15);
        assert_relative_eq!(k2.c, k.c / 2.0, epsilon = 1e-15);
        assert_relative_eq!(k2.d, k.d / 2.0, epsilon = 1e-15);
        assert_relative_eq!(k2.f, k.f / 2.0, epsilon = 1e-15);
        assert_eq!(k2.e, k.e);
        // g carries the additive -v term
        assert_relative_eq!(k.g + 25.0, 2.0 * (k2.g + 50.0), epsilon = 1e-12);
        assert!(lateral_coefficients(&p, 0.0).is_err());
        assert!(lateral_coefficients(&p, -3.0).is_err());
    }

    #[test]
    fn affine_matches_direct_euler() {
        let p = VehicleParams::default();
        let model = table_model();
        for v in [15.0, 18.0, 25.0, 30.0] {
            let direct = DMatrix::identity(4, 4) + continuous_state_matrix(&p, v).unwrap() * p.t_s;
            assert!((model.a(1.0 / v) - direct).amax() < 1e-12);
        }
        for i in 0..4 {
            assert_eq!(model.a0[(i, i)], 1.0);
        }
        assert_relative_eq!(model.a1[(1, 1)], 0.1 * -275.2, epsilon = 1e-12);
    }

    #[test]
    fn constraint_sets() {
        let model = table_model();
        assert_eq!(VehicleParams::default().e_y_max(), 4.0);
        assert!(model.x.contains(&DVector::from_vec(vec![4.0, 10.0, 1.5, 10.0]), 1e-12));
        assert!(!model.x.contains(&DVector::from_vec(vec![4.01, 0.0, 0.0, 0.0]), 1e-9));
        assert_relative_eq!(model.p_min, 1.0 / 30.0);
        assert_relative_eq!(model.p_max, 1.0 / 15.0);
        // symmetric: G = [I; -I], h = [h; h]
        let h = model.x.h();
        for i in 0..4 {
            assert_eq!(h[i], h[i + 4]);
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        let p = VehicleParams::default();
        let l = LateralLimits::table_defaults(p.t_s);
        assert!(build_lateral_lpv(&p, &l, 30.0, 15.0, &[-1e-2; 4], &[1e-2; 4]).is_err());
        assert!(build_lateral_lpv(&p, &l, 15.0, 30.0, &[1e-3; 4], &[1e-2; 4]).is_err());
        let mut bad = l.clone();
        bad.delta_max = 0.0;
        assert!(build_lateral_lpv(&p, &bad, 15.0, 30.0, &[-1e-2; 4], &[1e-2; 4]).is_err());
    }

    #[test]
    fn longitudinal_double_integrator() {
        let m = build_longitudinal(0.1, 15.0, 30.0, -6.0, 2.0).unwrap();
        assert_eq!(m.ad, Matrix2::new(1.0, 0.1, 0.0, 1.0));
        let (s, v) = m.step(3.0, 20.0, 0.0);
        assert_eq!((s, v), (5.0, 20.0));
        let mut st = (0.0, 20.0);
        for _ in 0..5 {
            st = m.step(st.0, st.1, 2.0);
        }
        assert_relative_eq!(st.1, 21.0, epsilon = 1e-12);
        assert!(build_longitudinal(0.0, 15.0, 30.0, -6.0, 2.0).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = table_model();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.p_max += 1e-12;
        assert_ne!(a.hash(), b.hash());
    }
}
