//! Dense convex QP solver (primal-dual interior point, Mehrotra predictor-corrector).
//!
//! ```text
//!     minimize    1/2 x' P x + q' x
//!     subject to  G x <= h
//!                 A x  = b
//! ```
//!
//! Rows of `G` and `A` are scaled to unit infinity norm and the cost is
//! normalized before iterating; the solution is reported in the original
//! scaling. When the main iteration fails to converge a phase-one LP decides
//! between infeasibility (with a Farkas certificate) and an iteration limit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue tolerance for the PSD check on `P`.
pub const PSD_TOL: f64 = 1e-10;
/// Bound on every KKT residual at `Optimal` status.
pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// Farkas ray proving `{G x <= h, A x = b}` empty:
/// `z >= 0`, `G'z + A'y = 0`, `h'z + b'y < 0`.
#[derive(Debug, Clone)]
pub struct InfeasibilityCertificate {
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    /// `-(h'z + b'y)` with `z` normalized to unit 1-norm.
    pub violation: f64,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Inequality multipliers.
    pub z: DVector<f64>,
    /// Equality multipliers.
    pub y: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub certificate: Option<InfeasibilityCertificate>,
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Optional starting point for `x`.
    pub x0: Option<DVector<f64>>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            x0: None,
        }
    }
}

impl QpProblem {
    /// Problem with no constraints.
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            g: DMatrix::zeros(0, n),
            h: DVector::zeros(0),
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
        }
    }

    /// Problem with only inequality constraints.
    pub fn with_inequalities(
        p: DMatrix<f64>,
        q: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
    ) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            g,
            h,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        let check = |what: &str, expected: usize, got: usize| {
            if expected != got {
                Err(Error::InvalidProblem(format!(
                    "{what}: expected {expected}, got {got}"
                )))
            } else {
                Ok(())
            }
        };
        check("P rows", n, self.p.nrows())?;
        check("P cols", n, self.p.ncols())?;
        check("G cols", n, self.g.ncols())?;
        check("h length", self.g.nrows(), self.h.len())?;
        check("A cols", n, self.a.ncols())?;
        check("b length", self.a.nrows(), self.b.len())?;
        let all_finite = self.p.iter().all(|v| v.is_finite())
            && self.q.iter().all(|v| v.is_finite())
            && self.g.iter().all(|v| v.is_finite())
            && self.h.iter().all(|v| v.is_finite())
            && self.a.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidProblem("non-finite problem data".into()));
        }
        if n == 0 {
            return Ok(());
        }
        let asym = (&self.p - self.p.transpose()).amax();
        let scale = self.p.amax().max(1.0);
        if asym > 1e-9 * scale {
            return Err(Error::InvalidProblem(format!(
                "P not symmetric (max asymmetry {asym:e})"
            )));
        }
        if self.p.amax() > 0.0 {
            let eig = SymmetricEigen::new(self.p.clone()).eigenvalues;
            let min_eig = eig.min();
            if min_eig < -PSD_TOL * scale {
                return Err(Error::IndefiniteCost { min_eig });
            }
        }
        Ok(())
    }
}

/// Solve a convex QP with default options.
pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(problem, &QpOptions::default())
}

/// Solve `min f'x s.t. G x <= h`.
pub fn solve_lp(f: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> Result<QpSolution> {
    let n = f.len();
    let problem = QpProblem::with_inequalities(DMatrix::zeros(n, n), f.clone(), g.clone(), h.clone());
    solve_qp(&problem)
}

pub fn solve_qp_with(problem: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    problem.validate()?;
    let scaled = Scaled::new(problem);

    // Trivially infeasible zero rows.
    if let Some(i) = scaled.bad_zero_row {
        let mut z = DVector::zeros(problem.g.nrows());
        z[i] = 1.0;
        return Ok(QpSolution {
            x: DVector::zeros(problem.n_vars()),
            z: z.clone(),
            y: DVector::zeros(problem.a.nrows()),
            objective: f64::NAN,
            status: QpStatus::Infeasible,
            kkt: KktResiduals::default(),
            iterations: 0,
            certificate: Some(InfeasibilityCertificate {
                violation: -problem.h[i],
                z,
                y: DVector::zeros(problem.a.nrows()),
            }),
        });
    }

    let x0 = opts.x0.clone();
    let run = ipm(&scaled.p, &scaled.q, &scaled.g, &scaled.h, &scaled.a, &scaled.b, opts.max_iter, opts.tol, x0);

    const POLISH_TOL: f64 = 1e-9;
    match run {
        IpmOutcome::Converged(it) => {
            let it = match scaled.polish(&it, POLISH_TOL) {
                Some(p) if scaled.residuals(&p).max() < scaled.residuals(&it).max() => p,
                _ => it,
            };
            Ok(scaled.finish(problem, it, QpStatus::Optimal))
        }
        IpmOutcome::Failed(it) if scaled.polish(&it, POLISH_TOL).is_some() => {
            let p = scaled.polish(&it, POLISH_TOL).expect("checked");
            Ok(scaled.finish(problem, p, QpStatus::Optimal))
        }
        IpmOutcome::Failed(it) => {
            let cert = phase_one(&scaled, opts.tol);
            match cert {
                Some(c) => {
                    let (z, y) = scaled.unscale_certificate(problem.g.nrows(), &c.z, &c.y);
                    let violation = -(problem.h.dot(&z) + problem.b.dot(&y));
                    let mut sol = scaled.finish(problem, it, QpStatus::Infeasible);
                    sol.objective = f64::NAN;
                    sol.certificate = Some(InfeasibilityCertificate { z, y, violation });
                    Ok(sol)
                }
                None => {
                    let status = if has_descent_ray(&scaled, opts.tol) {
                        QpStatus::Unbounded
                    } else {
                        QpStatus::MaxIter
                    };
                    Ok(scaled.finish(problem, it, status))
                }
            }
        }
    }
}

struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Original row index of every kept inequality row.
    g_rows: Vec<usize>,
    g_scale: Vec<f64>,
    a_scale: Vec<f64>,
    cost_scale: f64,
    bad_zero_row: Option<usize>,
}

impl Scaled {
    fn new(pr: &QpProblem) -> Self {
        let n = pr.n_vars();
        let mut g_rows = Vec::new();
        let mut g_scale = Vec::new();
        let mut bad_zero_row = None;
        for i in 0..pr.g.nrows() {
            let s = pr.g.row(i).amax();
            if s == 0.0 {
                if pr.h[i] < 0.0 && bad_zero_row.is_none() {
                    bad_zero_row = Some(i);
                }
                continue;
            }
            g_rows.push(i);
            g_scale.push(s);
        }
        let mut g = DMatrix::zeros(g_rows.len(), n);
        let mut h = DVector::zeros(g_rows.len());
        for (k, (&i, &s)) in g_rows.iter().zip(&g_scale).enumerate() {
            g.row_mut(k).copy_from(&(pr.g.row(i) / s));
            h[k] = pr.h[i] / s;
        }
        let a_scale: Vec<f64> = (0..pr.a.nrows())
            .map(|i| {
                let s = pr.a.row(i).amax();
                if s == 0.0 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        let mut a = pr.a.clone();
        let mut b = pr.b.clone();
        for (i, &s) in a_scale.iter().enumerate() {
            a.row_mut(i).scale_mut(1.0 / s);
            b[i] /= s;
        }
        let c = pr.p.amax().max(pr.q.amax());
        let cost_scale = if c > 0.0 { c } else { 1.0 };
        Self {
            p: &pr.p / cost_scale,
            q: &pr.q / cost_scale,
            g,
            h,
            a,
            b,
            g_rows,
            g_scale,
            a_scale,
            cost_scale,
            bad_zero_row,
        }
    }

    fn unscale_certificate(
        &self,
        m_total: usize,
        zs: &DVector<f64>,
        ys: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let mut z = DVector::zeros(m_total);
        for (k, &i) in self.g_rows.iter().enumerate() {
            z[i] = zs[k] / self.g_scale[k];
        }
        let y = DVector::from_iterator(ys.len(), ys.iter().zip(&self.a_scale).map(|(v, s)| v / s));
        let norm: f64 = z.iter().map(|v| v.abs()).sum::<f64>() + y.iter().map(|v| v.abs()).sum::<f64>();
        if norm > 0.0 {
            (z / norm, y / norm)
        } else {
            (z, y)
        }
    }

    fn finish(&self, pr: &QpProblem, it: Iterate, status: QpStatus) -> QpSolution {
        let kkt = self.residuals(&it);
        let mut z = DVector::zeros(pr.g.nrows());
        for (k, &i) in self.g_rows.iter().enumerate() {
            z[i] = it.z[k] * self.cost_scale / self.g_scale[k];
        }
        let y = DVector::from_iterator(
            it.y.len(),
            it.y.iter().zip(&self.a_scale).map(|(v, s)| v * self.cost_scale / s),
        );
        QpSolution {
            objective: pr.objective(&it.x),
            x: it.x,
            z,
            y,
            status,
            kkt,
            iterations: it.iterations,
            certificate: None,
        }
    }

    /// Active-set polish: solves the equality-constrained KKT system on the
    /// rows whose multiplier dominates the slack. Returns the polished point
    /// only when it meets `tol` on every residual.
    fn polish(&self, it: &Iterate, tol: f64) -> Option<Iterate> {
        let n = self.q.len();
        let me = self.b.len();
        let active: Vec<usize> = (0..self.h.len()).filter(|&i| it.z[i] > it.s[i]).collect();
        let na = active.len();
        let dim = n + na + me;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (n, n)).copy_from(&self.p);
        for (r, &i) in active.iter().enumerate() {
            for c in 0..n {
                k[(n + r, c)] = self.g[(i, c)];
                k[(c, n + r)] = self.g[(i, c)];
            }
        }
        if me > 0 {
            k.view_mut((n + na, 0), (me, n)).copy_from(&self.a);
            k.view_mut((0, n + na), (n, me)).copy_from(&self.a.transpose());
        }
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&self.q));
        for (r, &i) in active.iter().enumerate() {
            rhs[n + r] = self.h[i];
        }
        rhs.rows_mut(n + na, me).copy_from(&self.b);
        // Proximal-point refinement started at the interior iterate, so a
        // degenerate face resolves to the solution next to it.
        let delta = 1e-8;
        let mut kr = k.clone();
        for i in 0..dim {
            kr[(i, i)] += if i < n { delta } else { -delta };
        }
        let lu = kr.lu();
        let mut sol = DVector::zeros(dim);
        sol.rows_mut(0, n).copy_from(&it.x);
        for (r, &i) in active.iter().enumerate() {
            sol[n + r] = it.z[i];
        }
        sol.rows_mut(n + na, me).copy_from(&it.y);
        for _ in 0..8 {
            let r = &rhs - &k * &sol;
            sol += lu.solve(&r)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x = sol.rows(0, n).into_owned();
        let mut z = DVector::zeros(self.h.len());
        for (r, &i) in active.iter().enumerate() {
            if sol[n + r] < -tol {
                return None;
            }
            z[i] = sol[n + r].max(0.0);
        }
        let y = sol.rows(n + na, me).into_owned();
        let s = (&self.h - &self.g * &x).map(|v| v.max(0.0));
        let cand = Iterate { x, s, z, y, iterations: it.iterations };
        (self.residuals(&cand).max() <= tol).then_some(cand)
    }

    fn residuals(&self, it: &Iterate) -> KktResiduals {
        let x = &it.x;
        let stat = &self.p * x + &self.q + self.g.tr_mul(&it.z) + self.a.tr_mul(&it.y);
        let slack = &self.h - &self.g * x;
        let primal_ineq = slack.iter().fold(0.0_f64, |m, &s| m.max(-s));
        let primal_eq = if self.a.nrows() > 0 {
            (&self.a * x - &self.b).amax()
        } else {
            0.0
        };
        let dual = it.z.iter().fold(0.0_f64, |m, &z| m.max(-z));
        let comp = slack
            .iter()
            .zip(it.z.iter())
            .fold(0.0_f64, |m, (s, z)| m.max((s * z).abs()));
        KktResiduals {
            stationarity: if stat.is_empty() { 0.0 } else { stat.amax() },
            primal: primal_ineq.max(primal_eq),
            dual,
            complementarity: comp,
        }
    }
}

#[derive(Debug, Clone)]
struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
    iterations: usize,
}

enum IpmOutcome {
    Converged(Iterate),
    Failed(Iterate),
}

/// Nonzeros of `G` by row; constraint rows of MPC problems touch only a few
/// variables, so `G' W G` is accumulated from outer products of the rows.
struct SparseRows(Vec<Vec<(usize, f64)>>);

impl SparseRows {
    fn new(g: &DMatrix<f64>) -> Self {
        Self(
            g.row_iter()
                .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c, *v)).collect())
                .collect(),
        )
    }

    fn gram(&self, w: &DVector<f64>, n: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, n);
        for (row, wi) in self.0.iter().zip(w.iter()) {
            for &(c1, v1) in row {
                let s = wi * v1;
                for &(c2, v2) in row {
                    out[(c1, c2)] += s * v2;
                }
            }
        }
        out
    }
}

/// Solves the reduced Newton system
/// `[[P + G' W G, A'], [A, 0]] [dx; dy] = [rx; ry]`.
struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl Kkt {
    fn factor(p: &DMatrix<f64>, g: &SparseRows, a: &DMatrix<f64>, w: &DVector<f64>) -> Option<Self> {
        let n = p.nrows();
        let me = a.nrows();
        let mut m = DMatrix::zeros(n + me, n + me);
        let top = p + g.gram(w, n);
        m.view_mut((0, 0), (n, n)).copy_from(&top);
        if me > 0 {
            m.view_mut((n, 0), (me, n)).copy_from(a);
            m.view_mut((0, n), (n, me)).copy_from(&a.transpose());
        }
        let lu = m.clone().lu();
        if lu.is_invertible() && lu.u().diagonal().iter().all(|v| v.is_finite()) {
            return Some(Self { lu, n });
        }
        // Degenerate vertex: fewer active rows than variables near the end
        // of an LP. A tiny quasi-definite shift keeps the Newton step usable.
        let scale = top.diagonal().amax().max(1.0);
        for k in [1e-14, 1e-11, 1e-8] {
            let mut mr = m.clone();
            for i in 0..n {
                mr[(i, i)] += k * scale;
            }
            for i in n..n + me {
                mr[(i, i)] -= k * scale;
            }
            let lu = mr.lu();
            if lu.is_invertible() {
                return Some(Self { lu, n });
            }
        }
        None
    }

    fn solve(&self, rx: &DVector<f64>, ry: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let mut rhs = DVector::zeros(self.n + ry.len());
        rhs.rows_mut(0, self.n).copy_from(rx);
        rhs.rows_mut(self.n, ry.len()).copy_from(ry);
        let sol = self.lu.solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, self.n).into_owned(), sol.rows(self.n, ry.len()).into_owned()))
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(1.0_f64, f64::min)
}

#[allow(clippy::too_many_arguments)]
fn ipm(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    max_iter: usize,
    tol: f64,
    x0: Option<DVector<f64>>,
) -> IpmOutcome {
    let n = q.len();
    let m = h.len();
    let me = b.len();

    // Starting point: least-squares-regularized solve with unit weights.
    let ones = DVector::from_element(m, 1.0);
    let sparse = SparseRows::new(g);
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0,
        _ => Kkt::factor(p, &sparse, a, &ones)
            .and_then(|k| k.solve(&(g.tr_mul(h) - q), b))
            .map(|(x, _)| x)
            .unwrap_or_else(|| DVector::zeros(n)),
    };
    if x.iter().any(|v| !v.is_finite()) {
        x = DVector::zeros(n);
    }
    let mut s = h - g * &x;
    for si in s.iter_mut() {
        *si = si.max(1.0);
    }
    let mut z = DVector::from_element(m, 1.0);
    let mut y = DVector::zeros(me);

    let scale_d = 1.0 + q.amax().max(if p.is_empty() { 0.0 } else { p.amax() });
    let scale_p = 1.0 + h.amax().max(b.amax());

    let mut it = 0;
    let mut best: Option<(f64, Iterate)> = None;
    let snapshot = |x: &DVector<f64>, s: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, it| Iterate {
        x: x.clone(),
        s: s.clone(),
        z: z.clone(),
        y: y.clone(),
        iterations: it,
    };

    while it < max_iter {
        let r_d = p * &x + q + g.tr_mul(&z) + a.tr_mul(&y);
        let r_p = g * &x + &s - h;
        let r_e = a * &x - b;
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };

        let res_d = if n > 0 { r_d.amax() } else { 0.0 };
        let res_p = if m > 0 { r_p.amax() } else { 0.0 }.max(if me > 0 { r_e.amax() } else { 0.0 });
        let merit = res_d / scale_d + res_p / scale_p + mu;
        if best.as_ref().is_none_or(|(bm, _)| merit < *bm) {
            best = Some((merit, snapshot(&x, &s, &z, &y, it)));
        }
        let gap = s.dot(&z);
        let pobj = 0.5 * x.dot(&(p * &x)) + q.dot(&x);
        if res_d <= tol * scale_d && res_p <= tol * scale_p && gap <= tol * (1.0 + pobj.abs()) {
            return IpmOutcome::Converged(snapshot(&x, &s, &z, &y, it));
        }
        if x.amax() > 1e12 || z.amax() > 1e14 {
            break;
        }

        let w = DVector::from_iterator(m, z.iter().zip(s.iter()).map(|(z, s)| z / s));
        let Some(kkt) = Kkt::factor(p, &sparse, a, &w) else { break };

        // ds = -r_p - G dx ; dz = W G dx + S^-1 (Z r_p - r_c)
        let solve_dir = |r_c: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let t = DVector::from_iterator(
                m,
                (0..m).map(|i| (z[i] * r_p[i] - r_c[i]) / s[i]),
            );
            let rx = -&r_d - g.tr_mul(&t);
            let ry = -&r_e;
            let (dx, dy) = kkt.solve(&rx, &ry)?;
            let gdx = g * &dx;
            let ds = -&r_p - &gdx;
            let dz = DVector::from_iterator(m, (0..m).map(|i| w[i] * gdx[i] + t[i]));
            Some((dx, ds, dz, dy))
        };

        // Predictor.
        let r_c_aff = s.component_mul(&z);
        let Some((_, ds_a, dz_a, _)) = solve_dir(&r_c_aff) else { break };
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = if m > 0 {
            (&s + alpha_aff * &ds_a).dot(&(&z + alpha_aff * &dz_a)) / m as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };

        // Corrector.
        let r_c = DVector::from_iterator(
            m,
            (0..m).map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu),
        );
        let Some((dx, ds, dz, dy)) = solve_dir(&r_c) else { break };
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += alpha * dx;
        s += alpha * ds;
        z += alpha * dz;
        y += alpha * dy;
        it += 1;
        if s.iter().chain(z.iter()).any(|v| !v.is_finite() || *v <= 0.0) {
            break;
        }
    }
    let (_, mut last) = best.unwrap_or((f64::INFINITY, snapshot(&x, &s, &z, &y, it)));
    last.iterations = it;
    // Accept a slightly looser point when it already meets the KKT contract.
    let r_d = p * &last.x + q + g.tr_mul(&last.z) + a.tr_mul(&last.y);
    let slack = h - g * &last.x;
    let pri = slack.iter().fold(0.0_f64, |acc, v| acc.max(-v));
    let eq = if me > 0 { (a * &last.x - b).amax() } else { 0.0 };
    // Complementarity on the iterate's own slacks: recomputing `h - G x`
    // multiplies round-off by large multipliers.
    let comp = last
        .s
        .iter()
        .zip(last.z.iter())
        .fold(0.0_f64, |acc, (s, z)| acc.max((s * z).abs()));
    let stat = if n > 0 { r_d.amax() } else { 0.0 };
    if stat <= 1e-8 && pri.max(eq) <= 1e-8 && comp <= 1e-8 && last.z.iter().all(|v| *v >= 0.0) {
        return IpmOutcome::Converged(last);
    }
    IpmOutcome::Failed(last)
}

/// Phase-one LP on the scaled problem. Returns a normalized Farkas ray when
/// the minimal uniform violation is positive.
fn phase_one(sc: &Scaled, tol: f64) -> Option<PhaseOneRay> {
    let n = sc.q.len();
    let m = sc.h.len();
    let me = sc.b.len();
    let nv = n + 1;
    // Rows: G x - t <= h ; A x - t <= b ; -A x - t <= -b ; -t <= 1
    let rows = m + 2 * me + 1;
    let mut g = DMatrix::zeros(rows, nv);
    let mut h = DVector::zeros(rows);
    g.view_mut((0, 0), (m, n)).copy_from(&sc.g);
    for i in 0..m {
        g[(i, n)] = -1.0;
        h[i] = sc.h[i];
    }
    for i in 0..me {
        g.view_mut((m + i, 0), (1, n)).copy_from(&sc.a.row(i));
        g[(m + i, n)] = -1.0;
        h[m + i] = sc.b[i];
        g.view_mut((m + me + i, 0), (1, n)).copy_from(&(-sc.a.row(i)));
        g[(m + me + i, n)] = -1.0;
        h[m + me + i] = -sc.b[i];
    }
    g[(rows - 1, n)] = -1.0;
    h[rows - 1] = 1.0;
    let mut c = DVector::zeros(nv);
    c[n] = 1.0;
    // Small ridge on x keeps the phase-one iterates bounded along free directions.
    let mut pm = DMatrix::zeros(nv, nv);
    for i in 0..n {
        pm[(i, i)] = 1e-12;
    }
    let run = ipm(&pm, &c, &g, &h, &DMatrix::zeros(0, nv), &DVector::zeros(0), 200, tol.max(1e-12), None);
    let it = match run {
        IpmOutcome::Converged(it) => it,
        IpmOutcome::Failed(it) => it,
    };
    let t = it.x[n];
    if t <= 1e-8 {
        return None;
    }
    let zg = it.z.rows(0, m).into_owned();
    let y = it.z.rows(m, me).into_owned() - it.z.rows(m + me, me).into_owned();
    let norm = zg.iter().map(|v| v.abs()).sum::<f64>() + y.iter().map(|v| v.abs()).sum::<f64>();
    if norm <= 0.0 {
        return None;
    }
    let z = zg.map(|v| v.max(0.0)) / norm;
    let y = y / norm;
    let viol = -(sc.h.dot(&z) + sc.b.dot(&y));
    if viol < 1e-8 {
        return None;
    }
    Some(PhaseOneRay { z, y })
}

/// Looks for `d` with `P d = 0`, `A d = 0`, `G d <= 0`, `|d|_inf <= 1` and `q'd < 0`.
fn has_descent_ray(sc: &Scaled, tol: f64) -> bool {
    let n = sc.q.len();
    let m = sc.h.len();
    let rows = m + 2 * n;
    let mut g = DMatrix::zeros(rows, n);
    g.view_mut((0, 0), (m, n)).copy_from(&sc.g);
    let mut h = DVector::zeros(rows);
    for i in 0..n {
        g[(m + 2 * i, i)] = 1.0;
        h[m + 2 * i] = 1.0;
        g[(m + 2 * i + 1, i)] = -1.0;
        h[m + 2 * i + 1] = 1.0;
    }
    let pa = if sc.p.amax() > 0.0 {
        let mut pa = DMatrix::zeros(sc.a.nrows() + n, n);
        pa.view_mut((0, 0), (sc.a.nrows(), n)).copy_from(&sc.a);
        pa.view_mut((sc.a.nrows(), 0), (n, n)).copy_from(&sc.p);
        pa
    } else {
        sc.a.clone()
    };
    let zero_b = DVector::zeros(pa.nrows());
    let run = ipm(&DMatrix::zeros(n, n), &sc.q, &g, &h, &pa, &zero_b, 200, tol.max(1e-12), None);
    match run {
        IpmOutcome::Converged(it) => sc.q.dot(&it.x) < -1e-7,
        IpmOutcome::Failed(_) => false,
    }
}

struct PhaseOneRay {
    z: DVector<f64>,
    y: DVector<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn scalar_lower_bound() {
        // min x^2 s.t. x >= 1
        let pr = QpProblem::with_inequalities(dmatrix![2.0], dvector![0.0], dmatrix![-1.0], dvector![-1.0]);
        let sol = solve_qp(&pr).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-8);
        assert!(sol.kkt.max() <= KKT_TOL);
    }

    #[test]
    fn unconstrained_first_order_condition() {
        let p = dmatrix![4.0, 1.0; 1.0, 3.0];
        let q = dvector![1.0, -2.0];
        let sol = solve_qp(&QpProblem::unconstrained(p.clone(), q.clone())).unwrap();
        let expect = -p.clone().lu().solve(&q).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x, expect, epsilon = 1e-10);
    }

    #[test]
    fn lp_box_max() {
        let g = dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 1.0; 0.0, -1.0];
        let h = dvector![1.0, 1.0, 1.0, 1.0];
        let sol = solve_lp(&dvector![-1.0, 0.0], &g, &h).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.objective, -1.0, epsilon = 1e-8);
    }

    #[test]
    fn lp_infeasible_with_certificate() {
        // x <= 0, x >= 1
        let sol = solve_lp(&dvector![1.0], &dmatrix![1.0; -1.0], &dvector![0.0, -1.0]).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        let c = sol.certificate.unwrap();
        assert!(c.violation >= 1e-8);
        assert!(c.z.iter().all(|v| *v >= 0.0));
        let gz = dmatrix![1.0; -1.0].transpose() * &c.z;
        assert!(gz.amax() < 1e-8);
    }

    #[test]
    fn lp_unbounded_is_flagged() {
        // min -x s.t. -x <= 0
        let sol = solve_lp(&dvector![-1.0], &dmatrix![-1.0], &dvector![0.0]).unwrap();
        assert_eq!(sol.status, QpStatus::Unbounded);
    }

    #[test]
    fn equality_constrained() {
        // min x^2 + y^2 s.t. x + y = 1
        let mut pr = QpProblem::unconstrained(dmatrix![2.0, 0.0; 0.0, 2.0], dvector![0.0, 0.0]);
        pr.a = dmatrix![1.0, 1.0];
        pr.b = dvector![1.0];
        let sol = solve_qp(&pr).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x, dvector![0.5, 0.5], epsilon = 1e-9);
    }

    #[test]
    fn infeasible_equality_and_inequality() {
        // x + y = 3, x <= 1, y <= 1
        let mut pr = QpProblem::with_inequalities(
            DMatrix::identity(2, 2),
            dvector![0.0, 0.0],
            dmatrix![1.0, 0.0; 0.0, 1.0],
            dvector![1.0, 1.0],
        );
        pr.a = dmatrix![1.0, 1.0];
        pr.b = dvector![3.0];
        let sol = solve_qp(&pr).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        let c = sol.certificate.unwrap();
        let ray = pr.g.transpose() * &c.z + pr.a.transpose() * &c.y;
        assert!(ray.amax() < 1e-7, "{ray}");
        assert!(c.violation >= 1e-8);
    }

    #[test]
    fn indefinite_cost_rejected() {
        let pr = QpProblem::unconstrained(dmatrix![1.0, 0.0; 0.0, -1.0], dvector![0.0, 0.0]);
        assert!(matches!(solve_qp(&pr), Err(Error::IndefiniteCost { .. })));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let pr = QpProblem::with_inequalities(dmatrix![1.0], dvector![0.0], dmatrix![1.0, 2.0], dvector![1.0]);
        assert!(matches!(solve_qp(&pr), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn cost_scaling_leaves_argmin() {
        let p = dmatrix![2.0, 0.5; 0.5, 1.0];
        let q = dvector![-1.0, 3.0];
        let g = dmatrix![1.0, 1.0; -1.0, 0.0; 0.0, -1.0];
        let h = dvector![1.0, 0.0, 0.0];
        let a = solve_qp(&QpProblem::with_inequalities(p.clone(), q.clone(), g.clone(), h.clone())).unwrap();
        let b = solve_qp(&QpProblem::with_inequalities(&p * 37.5, &q * 37.5, g, h)).unwrap();
        assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-8);
    }
}
