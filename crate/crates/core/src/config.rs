//! Scenario configuration: TOML with `[vehicle]`, `[mpc]` and `[scenario]`
//! sections. Every field has a default (the lane-keeping scenario), unknown
//! keys are rejected by name.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tube_mpc::{DeltaMode, RowMode, TubeMpcConfig};
use crate::vehicle::{build_lateral_lpv, build_longitudinal, LateralLimits, LongitudinalModel, LpvModel, VehicleParams};

/// Controller and constraint parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcParams {
    pub horizon: usize,
    /// Speed-tracking weight.
    pub eta: f64,
    /// Acceleration weight.
    pub zeta: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub e_y_rate_max: f64,
    pub e_psi_max: f64,
    /// Defaults to `pi / (3 t_s)` when absent.
    pub e_psi_rate_max: Option<f64>,
    pub delta_max: f64,
    /// Diagonal of the lateral stage weight.
    pub q: [f64; 4],
    pub r: f64,
    /// Weights of the gain synthesis; default to `q`, `r`.
    pub q_syn: Option<[f64; 4]>,
    pub r_syn: Option<f64>,
    /// Width of the scheduling tube.
    pub delta_unc: f64,
    pub delta_mode: DeltaMode,
    /// Symmetric disturbance bound per state.
    pub d_max: [f64; 4],
    pub tighten_w: bool,
    pub rows: RowMode,
    pub rpi_max_iter: usize,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            horizon: 5,
            eta: 100.0,
            zeta: 0.1,
            a_min: -6.0,
            a_max: 2.0,
            v_min: 15.0,
            v_max: 30.0,
            e_y_rate_max: 10.0,
            e_psi_max: std::f64::consts::FRAC_PI_2,
            e_psi_rate_max: None,
            delta_max: 0.5,
            q: [50.0; 4],
            r: 5.0,
            q_syn: None,
            r_syn: None,
            delta_unc: 0.2,
            delta_mode: DeltaMode::Speed,
            d_max: [1e-2; 4],
            tighten_w: false,
            rows: RowMode::Reduced,
            rpi_max_iter: 500,
        }
    }
}

/// How the additive disturbance is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WSampling {
    /// Uniform over the box.
    #[default]
    Uniform,
    /// A uniformly chosen vertex of the box.
    Vertex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub s0: f64,
    pub v0: f64,
    /// `[e_y, e_y rate, e_psi, e_psi rate]`.
    pub x0: [f64; 4],
    pub v_ref: f64,
    pub steps: usize,
    pub seed: u64,
    pub disturbance: bool,
    pub w_sampling: WSampling,
    /// Draw the plant parameter inside the step-1 band instead of using `1/v`.
    pub p_deviation: bool,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            s0: 1.0,
            v0: 25.0,
            x0: [3.27, 0.55, -0.24, 0.3],
            v_ref: 18.0,
            steps: 100,
            seed: 0,
            disturbance: true,
            w_sampling: WSampling::Uniform,
            p_deviation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub vehicle: VehicleParams,
    pub mpc: MpcParams,
    pub scenario: ScenarioParams,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        let m = &self.mpc;
        let s = &self.scenario;
        let bad = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if m.horizon == 0 {
            return bad("mpc.horizon", "must be positive".into());
        }
        if !(m.eta > 0.0 && m.zeta > 0.0) {
            return bad("mpc.eta/zeta", "must be positive".into());
        }
        if !(m.v_min > 0.0 && m.v_min < m.v_max) {
            return bad("mpc.v_min/v_max", format!("need 0 < v_min < v_max, got [{}, {}]", m.v_min, m.v_max));
        }
        if !(m.delta_unc.is_finite() && m.delta_unc >= 0.0) {
            return bad("mpc.delta_unc", format!("must be >= 0, got {}", m.delta_unc));
        }
        if m.q.iter().any(|v| !(*v > 0.0)) || !(m.r > 0.0) {
            return bad("mpc.q/r", "weights must be positive".into());
        }
        if m.d_max.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("mpc.d_max", "bounds must be finite and >= 0".into());
        }
        if !(s.v0 >= m.v_min && s.v0 <= m.v_max) {
            return bad("scenario.v0", format!("{} outside [{}, {}]", s.v0, m.v_min, m.v_max));
        }
        if !(s.v_ref >= m.v_min && s.v_ref <= m.v_max) {
            return bad("scenario.v_ref", format!("{} outside [{}, {}]", s.v_ref, m.v_min, m.v_max));
        }
        let model = self.lateral_model()?;
        if !model.x.contains(&DVector::from_row_slice(&s.x0), 0.0) {
            return bad("scenario.x0", "initial lateral state violates the state constraints".into());
        }
        Ok(())
    }

    pub fn limits(&self) -> LateralLimits {
        let m = &self.mpc;
        LateralLimits {
            e_y_rate_max: m.e_y_rate_max,
            e_psi_max: m.e_psi_max,
            e_psi_rate_max: m
                .e_psi_rate_max
                .unwrap_or(std::f64::consts::PI / (3.0 * self.vehicle.t_s)),
            delta_max: m.delta_max,
        }
    }

    pub fn lateral_model(&self) -> Result<LpvModel> {
        let d = self.mpc.d_max;
        build_lateral_lpv(
            &self.vehicle,
            &self.limits(),
            self.mpc.v_min,
            self.mpc.v_max,
            &d.map(|v| -v),
            &d,
        )
    }

    pub fn longitudinal_model(&self) -> Result<LongitudinalModel> {
        let m = &self.mpc;
        build_longitudinal(self.vehicle.t_s, m.v_min, m.v_max, m.a_min, m.a_max)
    }

    pub fn q(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&self.mpc.q))
    }

    pub fn r(&self) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.mpc.r)
    }

    /// Synthesis weights `(Q, R)`.
    pub fn synthesis_weights(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let q = self.mpc.q_syn.unwrap_or(self.mpc.q);
        let r = self.mpc.r_syn.unwrap_or(self.mpc.r);
        (
            DMatrix::from_diagonal(&DVector::from_row_slice(&q)),
            DMatrix::from_element(1, 1, r),
        )
    }

    pub fn tube_config(&self) -> TubeMpcConfig {
        TubeMpcConfig {
            horizon: self.mpc.horizon,
            q: self.q(),
            r: self.r(),
            rows: self.mpc.rows,
            tighten_w: self.mpc.tighten_w,
        }
    }
}
