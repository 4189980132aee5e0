//! Closed-loop simulation of the cascade: longitudinal MPC and plant, the
//! scheduling tube built from its speed prediction, then the lateral tube MPC
//! and the lateral plant with a perturbed parameter and additive disturbance.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Config, WSampling};
use crate::error::{Error, Result};
use crate::longitudinal::solve_longitudinal_step;
use crate::optim::qp::QpStatus;
use crate::synthesis::Artifact;
use crate::tube_mpc::{build_scheduling_tube, scheduling_tube_nested, LateralController, SchedulingTube};
use crate::vehicle::{LongitudinalModel, LpvModel};

/// Tolerance of the constraint-violation counters.
pub const VIOLATION_TOL: f64 = 1e-9;
/// Band around the reference speed used for the settling time, m/s.
pub const SPEED_BAND: f64 = 0.05;
/// Lateral offset counted as centered, m.
pub const CENTER_BAND: f64 = 0.1;

/// State and decisions at one sampling instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub v_ref: f64,
    pub a_cmd: f64,
    pub long_status: QpStatus,
    /// `[e_y, e_y rate, e_psi, e_psi rate]` at time `k`.
    pub x: [f64; 4],
    pub delta_cmd: f64,
    pub lat_status: QpStatus,
    /// The lateral solve failed and the previous command was applied.
    pub held: bool,
    pub p_nominal: f64,
    pub p_actual: f64,
    /// Band the actual parameter was drawn from.
    pub p_lo: f64,
    pub p_hi: f64,
    pub w: [f64; 4],
    pub alpha: Vec<f64>,
    /// Predicted center one step ahead.
    pub z1: [f64; 4],
    pub objective: f64,
    /// Current scheduling tube lies in the previous one.
    pub nested: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimLog {
    pub seed: u64,
    pub t_s: f64,
    pub horizon: usize,
    pub records: Vec<StepRecord>,
    /// State after the last step.
    pub final_s: f64,
    pub final_v: f64,
    pub final_x: [f64; 4],
}

/// Summary figures of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub steps: usize,
    /// First time after which `|v - v_ref| <= SPEED_BAND` holds to the end.
    pub speed_settling_time: Option<f64>,
    pub max_abs_e_y: f64,
    /// First time after which `|e_y| <= CENTER_BAND` holds to the end.
    pub centering_time: Option<f64>,
    pub state_violations: usize,
    pub input_violations: usize,
    pub accel_violations: usize,
    pub speed_violations: usize,
    pub infeasible_steps: usize,
    pub nested_fraction: f64,
}

impl Metrics {
    pub fn violations(&self) -> usize {
        self.state_violations + self.input_violations + self.accel_violations + self.speed_violations
    }
}

/// Models, controller and options shared by every run of one configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub cfg: Config,
    pub lateral: LpvModel,
    pub longitudinal: LongitudinalModel,
    pub controller: LateralController,
    /// Half-widths of the plant disturbance box; the model's `W` by default.
    pub plant_w_bound: [f64; 4],
}

fn arr4(v: &DVector<f64>) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

impl Simulator {
    /// Fails with a hash mismatch if the artifact was made for another model.
    pub fn new(cfg: &Config, artifact: &Artifact) -> Result<Self> {
        cfg.validate()?;
        let lateral = cfg.lateral_model()?;
        let controller = LateralController::new(&lateral, artifact, cfg.tube_config())?;
        Ok(Self {
            cfg: cfg.clone(),
            longitudinal: cfg.longitudinal_model()?,
            lateral,
            controller,
            plant_w_bound: cfg.mpc.d_max,
        })
    }

    /// Runs the configured scenario with the given seed.
    pub fn run(&self, seed: u64) -> Result<SimLog> {
        let cfg = &self.cfg;
        let sc = &cfg.scenario;
        let mpc = &cfg.mpc;
        let n = mpc.horizon;
        let ts = cfg.vehicle.t_s;
        let model = &self.lateral;
        let lon = &self.longitudinal;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut s = sc.s0;
        let mut v = sc.v0;
        let mut x = DVector::from_row_slice(&sc.x0);
        let mut a_prev = 0.0;
        let mut delta_prev = 0.0;
        let mut prev_tube: Option<SchedulingTube> = None;
        let v_ref = vec![sc.v_ref; n];
        let mut records = Vec::with_capacity(sc.steps);

        for k in 0..sc.steps {
            // Longitudinal loop.
            let long = solve_longitudinal_step(s, v, &v_ref, lon, mpc.eta, mpc.zeta)?;
            let a_cmd = if long.status == QpStatus::Optimal {
                long.a_cmd
            } else {
                log::warn!("step {k}: longitudinal {:?}, holding {a_prev}", long.status);
                a_prev
            };
            let v_pred: Vec<f64> = long.v_pred.iter().map(|p| p.clamp(lon.v_min, lon.v_max)).collect();

            // Scheduling tube and lateral solve.
            let v_now = v.clamp(lon.v_min, lon.v_max);
            let tube = build_scheduling_tube(v_now, &v_pred, mpc.delta_unc, mpc.delta_mode, model)?;
            let nested = prev_tube.as_ref().is_none_or(|p| scheduling_tube_nested(p, &tube));
            let sol = self.controller.solve(&x, &tube)?;
            let held = sol.status != QpStatus::Optimal;
            let delta_cmd = if held {
                log::warn!("step {k}: lateral {:?}, holding {delta_prev}", sol.status);
                delta_prev
            } else {
                sol.delta_cmd
            };

            // Plant parameter and disturbance.
            let p_nominal = tube.p_now;
            let (p_lo, p_hi) = if sc.p_deviation {
                mpc.delta_mode.band(p_nominal, mpc.delta_unc, model.p_min, model.p_max)
            } else {
                (p_nominal, p_nominal)
            };
            let p_actual = if p_hi > p_lo { rng.random_range(p_lo..=p_hi) } else { p_lo };
            if !(p_lo <= p_actual && p_actual <= p_hi) {
                return Err(Error::Solver(format!("step {k}: plant parameter left its band")));
            }
            let mut w = DVector::zeros(4);
            if sc.disturbance {
                for (i, b) in self.plant_w_bound.iter().enumerate() {
                    w[i] = match sc.w_sampling {
                        WSampling::Uniform if *b > 0.0 => rng.random_range(-b..=*b),
                        WSampling::Uniform => 0.0,
                        WSampling::Vertex => {
                            if rng.random_bool(0.5) {
                                *b
                            } else {
                                -b
                            }
                        }
                    };
                }
            }

            records.push(StepRecord {
                k,
                t: k as f64 * ts,
                s,
                v,
                v_ref: sc.v_ref,
                a_cmd,
                long_status: long.status,
                x: arr4(&x),
                delta_cmd,
                lat_status: sol.status,
                held,
                p_nominal,
                p_actual,
                p_lo,
                p_hi,
                w: arr4(&w),
                alpha: sol.alpha.iter().copied().collect(),
                z1: arr4(&sol.z.row(1).transpose()),
                objective: sol.objective,
                nested,
            });

            x = model.a(p_actual) * &x + &model.b * delta_cmd + w;
            (s, v) = lon.step(s, v, a_cmd);
            a_prev = a_cmd;
            delta_prev = delta_cmd;
            prev_tube = Some(tube);
        }
        Ok(SimLog {
            seed,
            t_s: ts,
            horizon: n,
            records,
            final_s: s,
            final_v: v,
            final_x: arr4(&x),
        })
    }

    /// Independent runs, one per seed, in parallel.
    pub fn run_batch(&self, seeds: &[u64]) -> Vec<Result<SimLog>> {
        seeds.par_iter().map(|&seed| self.run(seed)).collect()
    }
}

/// Convenience wrapper: builds the simulator and runs the configured seed.
pub fn run_scenario(cfg: &Config, artifact: &Artifact) -> Result<SimLog> {
    Simulator::new(cfg, artifact)?.run(cfg.scenario.seed)
}

/// Metrics of a log against the limits in `cfg`.
pub fn compute_metrics(log: &SimLog, cfg: &Config) -> Result<Metrics> {
    if log.records.is_empty() {
        return Err(Error::InvalidParameter("empty simulation log".into()));
    }
    let model = cfg.lateral_model()?;
    let lon = cfg.longitudinal_model()?;
    let ts = log.t_s;
    let n = log.records.len();
    let v_ref = log.records[0].v_ref;

    // Trajectories include the state after the last step.
    let vs: Vec<f64> = log.records.iter().map(|r| r.v).chain([log.final_v]).collect();
    let xs: Vec<[f64; 4]> = log.records.iter().map(|r| r.x).chain([log.final_x]).collect();
    let settle = |ok: &dyn Fn(usize) -> bool, len: usize| -> Option<f64> {
        let mut first = None;
        for i in (0..len).rev() {
            if ok(i) {
                first = Some(i);
            } else {
                break;
            }
        }
        first.map(|i| i as f64 * ts)
    };
    let speed_settling_time = settle(&|i| (vs[i] - v_ref).abs() <= SPEED_BAND, vs.len());
    let centering_time = settle(&|i| xs[i][0].abs() <= CENTER_BAND, xs.len());
    let max_abs_e_y = xs.iter().map(|x| x[0].abs()).fold(0.0, f64::max);

    let state_violations = xs
        .iter()
        .filter(|x| model.x.max_violation(&DVector::from_row_slice(&x[..])) > VIOLATION_TOL)
        .count();
    let u_max = cfg.mpc.delta_max;
    let input_violations = log
        .records
        .iter()
        .filter(|r| r.delta_cmd.abs() > u_max + VIOLATION_TOL)
        .count();
    let accel_violations = log
        .records
        .iter()
        .filter(|r| r.a_cmd < lon.a_min - VIOLATION_TOL || r.a_cmd > lon.a_max + VIOLATION_TOL)
        .count();
    let speed_violations = vs
        .iter()
        .filter(|v| **v < lon.v_min - VIOLATION_TOL || **v > lon.v_max + VIOLATION_TOL)
        .count();
    let infeasible_steps = log
        .records
        .iter()
        .filter(|r| r.lat_status != QpStatus::Optimal || r.long_status != QpStatus::Optimal)
        .count();
    let nested = log.records.iter().filter(|r| r.nested).count();
    Ok(Metrics {
        steps: n,
        speed_settling_time,
        max_abs_e_y,
        centering_time,
        state_violations,
        input_violations,
        accel_violations,
        speed_violations,
        infeasible_steps,
        nested_fraction: nested as f64 / n as f64,
    })
}

/// Column names of the CSV log, in order.
pub fn csv_header(horizon: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "k", "t", "s", "v", "v_ref", "a_cmd", "long_status", "e_y", "e_y_rate", "e_psi", "e_psi_rate",
        "delta_cmd", "lat_status", "held", "p_nominal", "p_actual", "v_actual", "p_lo", "p_hi", "w0", "w1",
        "w2", "w3",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..=horizon).map(|i| format!("alpha{i}")));
    cols.extend((0..4).map(|i| format!("z1_{i}")));
    cols.push("objective".into());
    cols.push("nested".into());
    cols
}

fn status_name(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::Infeasible => "infeasible",
        QpStatus::Unbounded => "unbounded",
        QpStatus::MaxIter => "max_iter",
    }
}

/// Writes one header row and one row per step. Floats use the shortest
/// representation that round-trips.
pub fn write_csv<W: Write>(log: &SimLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(log.horizon))?;
    for r in &log.records {
        let mut row: Vec<String> = vec![r.k.to_string()];
        let mut num = |v: f64| row.push(format!("{v:?}"));
        for v in [r.t, r.s, r.v, r.v_ref, r.a_cmd] {
            num(v);
        }
        row.push(status_name(r.long_status).into());
        for v in r.x {
            row.push(format!("{v:?}"));
        }
        row.push(format!("{:?}", r.delta_cmd));
        row.push(status_name(r.lat_status).into());
        row.push(r.held.to_string());
        for v in [r.p_nominal, r.p_actual, 1.0 / r.p_actual, r.p_lo, r.p_hi] {
            row.push(format!("{v:?}"));
        }
        for v in r.w.iter().chain(&r.alpha).chain(&r.z1) {
            row.push(format!("{v:?}"));
        }
        row.push(format!("{:?}", r.objective));
        row.push(r.nested.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(log: &SimLog, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(log, std::io::BufWriter::new(file))
}
