//! Lateral homothetic-tube MPC.
//!
//! The predicted state set at step `i` is `z_i ⊕ α_i S`, with `S` the robust
//! invariant set from synthesis. Decision vector
//!
//! ```text
//!     d = [α_0 .. α_N, z_0 .. z_N, g_0 .. g_{N-1}]
//! ```
//!
//! with `α_0 = 0`, `z_0 = x`. Tube propagation, state and input constraints
//! are imposed at every vertex `v^j` of `S`, both scheduling bounds of the
//! step and both vertex gains; the terminal tube must lie in `S`.
//!
//! Rows for a fixed step, parameter bound and facet differ between vertices
//! (and between gains) only in the coefficient of `α_i`. Since `α_i >= 0`, the
//! whole family is equivalent to the single row carrying the largest
//! coefficient; [`RowMode::Reduced`] assembles that row and
//! [`RowMode::Full`] the literal enumeration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::qp::{solve_qp_with, QpOptions, QpProblem, QpStatus};
use crate::polytope::HPolytope;
use crate::synthesis::{Artifact, GainSchedule, RpiSet};
use crate::vehicle::LpvModel;

/// Ridge added to the Hessian.
pub const HESSIAN_RIDGE: f64 = 1e-8;
/// Slack below which a row counts as active in the diagnostics.
pub const ACTIVE_TOL: f64 = 1e-7;

/// How the uncertainty width `Δ` widens the nominal parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// `p ∈ p̂ [1 - Δ, 1 + Δ]`.
    Relative,
    /// `p ∈ [p̂ - Δ, p̂ + Δ]`.
    Additive,
    /// `Δ` is a speed band: `p ∈ [1/(v̂ + Δ), 1/(v̂ - Δ)]` with `v̂ = 1/p̂`.
    #[default]
    Speed,
}

impl std::str::FromStr for DeltaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" => Ok(Self::Relative),
            "additive" => Ok(Self::Additive),
            "speed" => Ok(Self::Speed),
            other => Err(Error::Config(format!(
                "delta mode must be `relative`, `additive` or `speed`, got `{other}`"
            ))),
        }
    }
}

impl DeltaMode {
    /// Interval around `p_hat` clamped to `[p_min, p_max]`.
    pub fn band(self, p_hat: f64, delta: f64, p_min: f64, p_max: f64) -> (f64, f64) {
        let (lo, hi) = match self {
            Self::Relative => (p_hat * (1.0 - delta), p_hat * (1.0 + delta)),
            Self::Additive => (p_hat - delta, p_hat + delta),
            Self::Speed => {
                let v = 1.0 / p_hat;
                let hi = if v > delta { 1.0 / (v - delta) } else { f64::INFINITY };
                (1.0 / (v + delta), hi)
            }
        };
        (lo.clamp(p_min, p_max), hi.clamp(p_min, p_max))
    }
}

/// Scheduling-parameter bounds over the horizon. Entry `i` of the vectors
/// refers to prediction step `i + 1`; step 0 uses `p_now`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingTube {
    pub p_hat: DVector<f64>,
    pub p_lo: DVector<f64>,
    pub p_hi: DVector<f64>,
    pub p_now: f64,
}

impl SchedulingTube {
    pub fn horizon(&self) -> usize {
        self.p_hat.len()
    }

    /// Parameter interval used by the dynamics from step `i` to `i + 1`.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        if i == 0 {
            (self.p_now, self.p_now)
        } else {
            (self.p_lo[i - 1], self.p_hi[i - 1])
        }
    }

    /// Constant parameter over the horizon with no uncertainty.
    pub fn constant(p: f64, horizon: usize) -> Self {
        let v = DVector::from_element(horizon, p);
        Self {
            p_hat: v.clone(),
            p_lo: v.clone(),
            p_hi: v,
            p_now: p,
        }
    }
}

/// Tube from the predicted speeds `v*_{1|k} .. v*_{N|k}` and the current speed.
pub fn build_scheduling_tube(
    v_now: f64,
    predicted_speeds: &[f64],
    delta_unc: f64,
    mode: DeltaMode,
    model: &LpvModel,
) -> Result<SchedulingTube> {
    if !(delta_unc.is_finite() && delta_unc >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "uncertainty width must be >= 0, got {delta_unc}"
        )));
    }
    let (v_min, v_max) = (1.0 / model.p_max, 1.0 / model.p_min);
    let slack = 1e-9 * v_max;
    let check = |v: f64| {
        if v.is_finite() && v >= v_min - slack && v <= v_max + slack {
            Ok((1.0 / v).clamp(model.p_min, model.p_max))
        } else {
            Err(Error::InvalidParameter(format!(
                "speed {v} outside [{v_min}, {v_max}]"
            )))
        }
    };
    let p_now = check(v_now)?;
    let n = predicted_speeds.len();
    let mut p_hat = DVector::zeros(n);
    let mut p_lo = DVector::zeros(n);
    let mut p_hi = DVector::zeros(n);
    for (i, &v) in predicted_speeds.iter().enumerate() {
        let p = check(v)?;
        let (lo, hi) = mode.band(p, delta_unc, model.p_min, model.p_max);
        p_hat[i] = p;
        p_lo[i] = lo;
        p_hi[i] = hi;
    }
    Ok(SchedulingTube {
        p_hat,
        p_lo,
        p_hi,
        p_now,
    })
}

/// Whether the current tube lies inside the previous one shifted by a step:
/// `p_now` in the previous step-1 interval and every later interval inside
/// its predecessor's.
pub fn scheduling_tube_nested(prev: &SchedulingTube, cur: &SchedulingTube) -> bool {
    let tol = 1e-12;
    let n = prev.horizon().min(cur.horizon() + 1);
    if n == 0 {
        return true;
    }
    let inside = |p_lo: f64, p_hi: f64, lo: f64, hi: f64| lo >= p_lo - tol && hi <= p_hi + tol;
    if !inside(prev.p_lo[0], prev.p_hi[0], cur.p_now, cur.p_now) {
        return false;
    }
    (1..n).all(|i| inside(prev.p_lo[i], prev.p_hi[i], cur.p_lo[i - 1], cur.p_hi[i - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RowMode {
    /// One row per facet with the worst-case `α` coefficient.
    #[default]
    Reduced,
    /// Every vertex and gain explicitly.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TubeMpcConfig {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub rows: RowMode,
    /// Tighten propagation and state rows by the support function of `W`.
    pub tighten_w: bool,
}

/// Row counts of one assembled QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCount {
    pub n_vars: usize,
    pub equalities: usize,
    /// Inequality rows actually assembled.
    pub inequalities: usize,
    /// Inequality rows of the literal per-vertex enumeration, counting each
    /// distinct parameter bound once, plus the `α >= 0` rows.
    pub inequalities_full: usize,
}

/// Inequality families, in assembly order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowFamily {
    Tube,
    State,
    Input,
    Terminal,
    Radius,
}

#[derive(Debug, Clone)]
pub struct LateralQp {
    pub problem: QpProblem,
    pub count: ConstraintCount,
    /// Family of every inequality row.
    pub families: Vec<RowFamily>,
    pub horizon: usize,
    pub nx: usize,
    pub nu: usize,
}

impl LateralQp {
    pub fn alpha_index(&self, i: usize) -> usize {
        i
    }

    pub fn z_index(&self, i: usize) -> usize {
        self.horizon + 1 + i * self.nx
    }

    pub fn g_index(&self, i: usize) -> usize {
        (self.horizon + 1) * (1 + self.nx) + i * self.nu
    }

    /// Splits a decision vector into `(α, z, g)`.
    pub fn unpack(&self, d: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.horizon;
        let alpha = DVector::from_fn(n + 1, |i, _| d[self.alpha_index(i)]);
        let z = DMatrix::from_fn(n + 1, self.nx, |i, c| d[self.z_index(i) + c]);
        let g = DMatrix::from_fn(n, self.nu, |i, c| d[self.g_index(i) + c]);
        (alpha, z, g)
    }
}

/// Active-row counts per family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveRows {
    pub tube: usize,
    pub state: usize,
    pub input: usize,
    pub terminal: usize,
}

#[derive(Debug, Clone)]
pub struct TubeSolution {
    /// Radii `α_0 .. α_N`.
    pub alpha: DVector<f64>,
    /// Centers, one row per step `0 .. N`.
    pub z: DMatrix<f64>,
    /// Feed-forward inputs, one row per step `0 .. N-1`.
    pub g: DMatrix<f64>,
    /// Applied steering `g_0`.
    pub delta_cmd: f64,
    pub objective: f64,
    pub status: QpStatus,
    pub active: ActiveRows,
    pub count: ConstraintCount,
    pub iterations: usize,
}

/// The lateral controller: gain schedule, invariant set and precomputed cost
/// moments of the vertex list.
#[derive(Debug, Clone)]
pub struct LateralController {
    model: LpvModel,
    gains: GainSchedule,
    set: RpiSet,
    facets: HPolytope,
    cfg: TubeMpcConfig,
    /// Vertices of `S` as columns.
    verts: DMatrix<f64>,
    /// `Σ_j v^j`.
    s1: DVector<f64>,
    /// `Σ_j v^j v^jᵀ`.
    s2: DMatrix<f64>,
    /// `max_j G^f_r v^j` per facet.
    terminal_coeff: DVector<f64>,
    /// `max_{l,j} G^u_r K^l v^j` per input row.
    input_coeff: DVector<f64>,
    /// Propagation rows (`G^f`) and state rows (`G^x`).
    tables: [RowTables; 2],
}

/// Products of one constraint matrix `G` with the model, so that the `α_i`
/// coefficients at parameter `p` are `c0[l] + p c1` for every (row, vertex).
#[derive(Debug, Clone)]
struct RowTables {
    family: RowFamily,
    g: DMatrix<f64>,
    h: DVector<f64>,
    w_support: DVector<f64>,
    ga0: DMatrix<f64>,
    ga1: DMatrix<f64>,
    gb: DMatrix<f64>,
    c0: [DMatrix<f64>; 2],
    c1: DMatrix<f64>,
    /// Per row, the lines `(c0, c1)` forming the upper envelope over
    /// `[p_min, p_max]`, all gains and vertices pooled.
    envelope: Vec<Vec<(f64, f64)>>,
}

/// Lines `a + b p` that attain `max_k (a_k + b_k p)` somewhere on `[lo, hi]`.
/// The maximum over the returned subset equals the maximum over all lines
/// for every `p` in the interval.
pub fn upper_envelope(lines: &[(f64, f64)], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let eval = |l: &(f64, f64), p: f64| l.0 + l.1 * p;
    let Some(mut cur) = lines.iter().copied().reduce(|best, l| {
        let (vb, vl) = (eval(&best, lo), eval(&l, lo));
        if vl > vb || (vl == vb && l.1 > best.1) {
            l
        } else {
            best
        }
    }) else {
        return Vec::new();
    };
    let mut out = vec![cur];
    let mut p_cur = lo;
    loop {
        let mut next: Option<((f64, f64), f64)> = None;
        for &l in lines {
            if l.1 <= cur.1 {
                continue;
            }
            let x = ((cur.0 - l.0) / (l.1 - cur.1)).max(p_cur);
            if x >= hi {
                continue;
            }
            let better = match next {
                None => true,
                Some((nl, nx)) => x < nx || (x == nx && l.1 > nl.1),
            };
            if better {
                next = Some((l, x));
            }
        }
        match next {
            Some((l, x)) => {
                out.push(l);
                cur = l;
                p_cur = x;
            }
            None => break,
        }
    }
    out
}

impl RowTables {
    fn new(
        family: RowFamily,
        set: &HPolytope,
        model: &LpvModel,
        gains: &GainSchedule,
        verts: &DMatrix<f64>,
        w_verts: &[DVector<f64>],
    ) -> Self {
        let g = set.g().clone();
        let ga0 = &g * &model.a0;
        let ga1 = &g * &model.a1;
        let gb = &g * &model.b;
        let c0 = [
            verts.tr_mul(&(&ga0 + &gb * &gains.k1).transpose()),
            verts.tr_mul(&(&ga0 + &gb * &gains.k2).transpose()),
        ];
        let c1 = verts.tr_mul(&ga1.transpose());
        let envelope = (0..g.nrows())
            .map(|r| {
                let lines: Vec<(f64, f64)> = c0
                    .iter()
                    .flat_map(|c| c.column(r).iter().zip(c1.column(r).iter()).map(|(a, b)| (*a, *b)).collect::<Vec<_>>())
                    .collect();
                upper_envelope(&lines, model.p_min, model.p_max)
            })
            .collect();
        Self {
            family,
            w_support: support_over(&g, w_verts),
            h: set.h().clone(),
            g,
            ga0,
            ga1,
            gb,
            c0,
            c1,
            envelope,
        }
    }

    /// Coefficients of `α_i` for row `r` at parameter `p`, one per
    /// (gain, vertex) pair, or only their maximum.
    fn alpha_coeffs(&self, r: usize, p: f64, mode: RowMode) -> Vec<f64> {
        if mode == RowMode::Reduced {
            let best = self.envelope[r]
                .iter()
                .map(|(a, b)| a + p * b)
                .fold(f64::NEG_INFINITY, f64::max);
            return vec![best];
        }
        let c1 = self.c1.column(r);
        let per = self.c0.iter().flat_map(|c0| {
            c0.column(r)
                .iter()
                .zip(c1.iter())
                .map(|(a, b)| a + p * b)
                .collect::<Vec<_>>()
        });
        per.collect()
    }
}

fn row_max(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.nrows(), |r, _| m.row(r).max())
}

fn support_over(g: &DMatrix<f64>, pts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_fn(g.nrows(), |r, _| {
        pts.iter()
            .map(|w| g.row(r).dot(&w.transpose()))
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

impl LateralController {
    /// Controller from an artifact, refusing a model with a different hash.
    pub fn new(model: &LpvModel, artifact: &Artifact, cfg: TubeMpcConfig) -> Result<Self> {
        let hash = model.hash();
        if hash != artifact.model_hash {
            return Err(Error::HashMismatch {
                artifact: artifact.model_hash.clone(),
                model: hash,
            });
        }
        Self::from_parts(model, &artifact.gains, &artifact.rpi, cfg)
    }

    pub fn from_parts(
        model: &LpvModel,
        gains: &GainSchedule,
        set: &RpiSet,
        cfg: TubeMpcConfig,
    ) -> Result<Self> {
        let (nx, nu) = (model.nx(), model.nu());
        if cfg.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        if cfg.q.shape() != (nx, nx) || cfg.r.shape() != (nu, nu) {
            return Err(Error::DimensionMismatch {
                expected: nx,
                got: cfg.q.nrows(),
            });
        }
        if set.h.dim() != nx || set.v.is_empty() {
            return Err(Error::InvalidParameter("invariant set does not match the model".into()));
        }
        let facets = set.h.normalized()?;
        let vs = set.v.vertices();
        let verts = DMatrix::from_fn(nx, vs.len(), |r, c| vs[c][r]);
        let s1 = verts.column_sum();
        let s2 = &verts * verts.transpose();
        let terminal_coeff = row_max(&(facets.g() * &verts));
        let gu = model.u.g();
        let input_coeff = row_max(&(gu * &gains.k1 * &verts)).sup(&row_max(&(gu * &gains.k2 * &verts)));
        let w_verts = model.w.vertex_enumeration()?;
        let tables = [
            RowTables::new(RowFamily::Tube, &facets, model, gains, &verts, w_verts.vertices()),
            RowTables::new(RowFamily::State, &model.x, model, gains, &verts, w_verts.vertices()),
        ];
        Ok(Self {
            model: model.clone(),
            gains: gains.clone(),
            set: set.clone(),
            facets,
            cfg,
            verts,
            s1,
            s2,
            terminal_coeff,
            input_coeff,
            tables,
        })
    }

    pub fn config(&self) -> &TubeMpcConfig {
        &self.cfg
    }

    pub fn gains(&self) -> &GainSchedule {
        &self.gains
    }

    pub fn set(&self) -> &RpiSet {
        &self.set
    }

    pub fn model(&self) -> &LpvModel {
        &self.model
    }

    pub fn n_vertices(&self) -> usize {
        self.verts.ncols()
    }

    /// Assembles the QP for measured state `x` and scheduling tube `tube`.
    pub fn build_qp(&self, x: &DVector<f64>, tube: &SchedulingTube) -> Result<LateralQp> {
        let n = self.cfg.horizon;
        let (nx, nu) = (self.model.nx(), self.model.nu());
        if x.len() != nx {
            return Err(Error::DimensionMismatch {
                expected: nx,
                got: x.len(),
            });
        }
        if tube.horizon() < n.saturating_sub(1) {
            return Err(Error::InvalidParameter(format!(
                "scheduling tube covers {} steps, horizon needs {}",
                tube.horizon(),
                n - 1
            )));
        }
        let nv = (n + 1) * (1 + nx) + n * nu;
        let mut qp = LateralQp {
            problem: QpProblem::unconstrained(DMatrix::zeros(nv, nv), DVector::zeros(nv)),
            count: ConstraintCount {
                n_vars: nv,
                equalities: 1 + nx,
                inequalities: 0,
                inequalities_full: 0,
            },
            families: Vec::new(),
            horizon: n,
            nx,
            nu,
        };
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut families = Vec::new();
        let r_count = self.verts.ncols();
        let gf = self.facets.g();
        let hf = self.facets.h();
        let gu = self.model.u.g();
        let hu = self.model.u.h();
        let tighten = self.cfg.tighten_w;
        let ks = [&self.gains.k1, &self.gains.k2];
        let mut full = 0usize;

        for i in 0..n {
            let (lo, hi) = tube.interval(i);
            let ps: Vec<f64> = if hi > lo { vec![lo, hi] } else { vec![lo] };
            for &p in &ps {
                for t in &self.tables {
                    let (ga, gb) = (&t.ga0 + &t.ga1 * p, &t.gb);
                    full += 2 * r_count * t.g.nrows();
                    for rr in 0..t.g.nrows() {
                        for ca in t.alpha_coeffs(rr, p, self.cfg.rows) {
                            let mut row = Vec::with_capacity(2 * nx + nu + 2);
                            row.push((qp.alpha_index(i), ca));
                            for c in 0..nx {
                                row.push((qp.z_index(i) + c, ga[(rr, c)]));
                            }
                            for c in 0..nu {
                                row.push((qp.g_index(i) + c, gb[(rr, c)]));
                            }
                            let mut rhs = if tighten { -t.w_support[rr] } else { 0.0 };
                            if t.family == RowFamily::Tube {
                                for c in 0..nx {
                                    row.push((qp.z_index(i + 1) + c, -t.g[(rr, c)]));
                                }
                                row.push((qp.alpha_index(i + 1), -t.h[rr]));
                            } else {
                                rhs += t.h[rr];
                            }
                            rows.push((row, rhs));
                            families.push(t.family);
                        }
                    }
                }
            }
            // Input rows do not depend on p.
            let input_coeffs: Vec<DMatrix<f64>> = ks.iter().map(|k| gu * *k * &self.verts).collect();
            full += ks.len() * r_count * gu.nrows();
            for rr in 0..gu.nrows() {
                let alpha_coeffs: Vec<f64> = match self.cfg.rows {
                    RowMode::Reduced => vec![self.input_coeff[rr]],
                    RowMode::Full => input_coeffs
                        .iter()
                        .flat_map(|c| c.row(rr).iter().copied().collect::<Vec<_>>())
                        .collect(),
                };
                for ca in alpha_coeffs {
                    let mut row = vec![(qp.alpha_index(i), ca)];
                    for c in 0..nu {
                        row.push((qp.g_index(i) + c, gu[(rr, c)]));
                    }
                    rows.push((row, hu[rr]));
                    families.push(RowFamily::Input);
                }
            }
        }

        // Terminal tube inside S.
        let term = gf * &self.verts;
        full += r_count * gf.nrows();
        for rr in 0..gf.nrows() {
            let alpha_coeffs: Vec<f64> = match self.cfg.rows {
                RowMode::Reduced => vec![self.terminal_coeff[rr]],
                RowMode::Full => term.row(rr).iter().copied().collect(),
            };
            for ca in alpha_coeffs {
                let mut row = vec![(qp.alpha_index(n), ca)];
                for c in 0..nx {
                    row.push((qp.z_index(n) + c, gf[(rr, c)]));
                }
                rows.push((row, hf[rr]));
                families.push(RowFamily::Terminal);
            }
        }
        for i in 0..=n {
            rows.push((vec![(qp.alpha_index(i), -1.0)], 0.0));
            families.push(RowFamily::Radius);
        }
        full += n + 1;

        let mut g = DMatrix::zeros(rows.len(), nv);
        let mut h = DVector::zeros(rows.len());
        for (k, (row, rhs)) in rows.into_iter().enumerate() {
            for (c, v) in row {
                g[(k, c)] += v;
            }
            h[k] = rhs;
        }

        let mut aeq = DMatrix::zeros(1 + nx, nv);
        let mut beq = DVector::zeros(1 + nx);
        aeq[(0, qp.alpha_index(0))] = 1.0;
        for c in 0..nx {
            aeq[(1 + c, qp.z_index(0) + c)] = 1.0;
            beq[1 + c] = x[c];
        }

        let hess = self.hessian(&qp);
        qp.count.inequalities = g.nrows();
        qp.count.inequalities_full = full;
        qp.families = families;
        qp.problem = QpProblem {
            p: hess,
            q: DVector::zeros(nv),
            g,
            h,
            a: aeq,
            b: beq,
        };
        Ok(qp)
    }

    /// `P` of `1/2 dᵀ P d`, the vertex-summed cost, plus the ridge.
    fn hessian(&self, qp: &LateralQp) -> DMatrix<f64> {
        let n = qp.horizon;
        let (nx, nu) = (qp.nx, qp.nu);
        let nv = qp.count.n_vars;
        let r = self.verts.ncols() as f64;
        // Quadratic form m with cost dᵀ m d.
        let mut m = DMatrix::zeros(nv, nv);
        let add_state = |m: &mut DMatrix<f64>, ai: usize, zi: usize, w: &DMatrix<f64>, factor: f64| {
            let ws1 = w * &self.s1;
            m[(ai, ai)] += factor * (w * &self.s2).trace();
            for c in 0..nx {
                m[(ai, zi + c)] += factor * ws1[c];
                m[(zi + c, ai)] += factor * ws1[c];
                for d in 0..nx {
                    m[(zi + c, zi + d)] += factor * r * w[(c, d)];
                }
            }
        };
        let ks = [&self.gains.k1, &self.gains.k2];
        for i in 0..n {
            add_state(&mut m, qp.alpha_index(i), qp.z_index(i), &self.cfg.q, 2.0);
            let (ai, gi) = (qp.alpha_index(i), qp.g_index(i));
            for k in ks {
                let rks1 = &self.cfg.r * k * &self.s1;
                m[(ai, ai)] += (k.transpose() * &self.cfg.r * k * &self.s2).trace();
                for c in 0..nu {
                    m[(ai, gi + c)] += rks1[c];
                    m[(gi + c, ai)] += rks1[c];
                    for d in 0..nu {
                        m[(gi + c, gi + d)] += r * self.cfg.r[(c, d)];
                    }
                }
            }
        }
        for l in 0..2 {
            add_state(&mut m, qp.alpha_index(n), qp.z_index(n), self.gains.p(l), 1.0);
        }
        let mut hess = m * 2.0;
        hess = (&hess + hess.transpose()) * 0.5;
        for k in 0..nv {
            hess[(k, k)] += HESSIAN_RIDGE;
        }
        hess
    }

    /// Builds and solves one step. Infeasibility is reported through
    /// `status`; the caller picks the fallback.
    pub fn solve(&self, x: &DVector<f64>, tube: &SchedulingTube) -> Result<TubeSolution> {
        self.solve_with(x, tube, None)
    }

    /// As [`Self::solve`] with an optional warm start for the decision vector.
    pub fn solve_with(
        &self,
        x: &DVector<f64>,
        tube: &SchedulingTube,
        warm: Option<DVector<f64>>,
    ) -> Result<TubeSolution> {
        let qp = self.build_qp(x, tube)?;
        let opts = QpOptions {
            x0: warm,
            ..QpOptions::default()
        };
        let sol = solve_qp_with(&qp.problem, &opts)?;
        let (mut alpha, mut z, g) = qp.unpack(&sol.x);
        // The equalities hold to round-off; pin them exactly.
        alpha[0] = 0.0;
        z.row_mut(0).copy_from(&x.transpose());
        let mut active = ActiveRows::default();
        if sol.status == QpStatus::Optimal {
            let slack = &qp.problem.h - &qp.problem.g * &sol.x;
            let tol = ACTIVE_TOL * (1.0 + qp.problem.h.amax());
            for (s, fam) in slack.iter().zip(&qp.families) {
                if *s <= tol {
                    match fam {
                        RowFamily::Tube => active.tube += 1,
                        RowFamily::State => active.state += 1,
                        RowFamily::Input => active.input += 1,
                        RowFamily::Terminal => active.terminal += 1,
                        RowFamily::Radius => {}
                    }
                }
            }
        }
        Ok(TubeSolution {
            delta_cmd: g[(0, 0)],
            alpha,
            z,
            g,
            objective: sol.objective,
            status: sol.status,
            active,
            count: qp.count,
            iterations: sol.iterations,
        })
    }

    /// Largest violation of `z_{i+1} ⊕ α_{i+1} S ⊇ A(p)(z_i + α_i v) + B(g_i + α_i K v)`
    /// for the given step, parameter, vertex point `v` of `S` and gain `k`.
    pub fn containment_violation(
        &self,
        sol: &TubeSolution,
        i: usize,
        p: f64,
        v: &DVector<f64>,
        k: &DMatrix<f64>,
    ) -> f64 {
        let zi = sol.z.row(i).transpose();
        let zn = sol.z.row(i + 1).transpose();
        let gi = sol.g.row(i).transpose();
        let xi = &zi + v * sol.alpha[i];
        let ui = &gi + k * v * sol.alpha[i];
        let next = self.model.a(p) * xi + &self.model.b * ui;
        let lhs = self.facets.g() * (next - zn);
        let rhs = self.facets.h() * sol.alpha[i + 1];
        (lhs - rhs).max()
    }
}
