//! Small dense LMI feasibility solver.
//!
//! Each block is an affine symmetric matrix function
//! `F_b(theta) = F_b0 + sum_i theta_i F_bi`. The solver maximizes the common
//! margin `t` subject to `F_b(theta) - t I >= 0` for every block with a
//! log-det barrier method (damped Newton, geometric barrier schedule).

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Margin a solution must reach to count as strictly feasible.
pub const FEAS_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub size: usize,
    pub f0: DMatrix<f64>,
    /// Sparse list of `(variable index, coefficient matrix)`.
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl LmiBlock {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            f0: DMatrix::zeros(size, size),
            terms: Vec::new(),
        }
    }

    /// Adds `theta_var * coeff` to the block, merging repeated variables.
    pub fn add_term(&mut self, var: usize, coeff: DMatrix<f64>) {
        if let Some((_, m)) = self.terms.iter_mut().find(|(v, _)| *v == var) {
            *m += coeff;
        } else {
            self.terms.push((var, coeff));
        }
    }

    pub fn evaluate(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.f0.clone();
        for (v, m) in &self.terms {
            f += m * theta[*v];
        }
        f
    }

    pub fn min_eigenvalue(&self, theta: &DVector<f64>) -> f64 {
        let f = self.evaluate(theta);
        SymmetricEigen::new((&f + f.transpose()) * 0.5).eigenvalues.min()
    }
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub n_vars: usize,
    pub blocks: Vec<LmiBlock>,
    /// Optional box `|theta_i| <= bound`; normalizes homogeneous problems.
    pub var_bound: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LmiOutcome {
    pub theta: DVector<f64>,
    /// Smallest eigenvalue over all blocks evaluated at `theta`.
    pub margin: f64,
    pub feasible: bool,
    pub newton_steps: usize,
}

#[derive(Debug, Clone)]
pub struct SdpOptions {
    /// Stop once the barrier duality bound `nu / s` drops below this.
    pub gap_tol: f64,
    pub max_newton: usize,
    pub theta0: Option<DVector<f64>>,
    /// Stop early when the margin exceeds this (unbounded problems).
    pub margin_cap: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            max_newton: 2000,
            theta0: None,
            margin_cap: 1e6,
        }
    }
}

impl LmiProblem {
    pub fn validate(&self) -> Result<()> {
        for (k, b) in self.blocks.iter().enumerate() {
            let bad_shape = |m: &DMatrix<f64>| m.nrows() != b.size || m.ncols() != b.size;
            if bad_shape(&b.f0) || b.terms.iter().any(|(_, m)| bad_shape(m)) {
                return Err(Error::InvalidProblem(format!("block {k}: size mismatch")));
            }
            let asym = |m: &DMatrix<f64>| (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0);
            if asym(&b.f0) || b.terms.iter().any(|(_, m)| asym(m)) {
                return Err(Error::InvalidProblem(format!("block {k}: not symmetric")));
            }
            if let Some((v, _)) = b.terms.iter().find(|(v, _)| *v >= self.n_vars) {
                return Err(Error::InvalidProblem(format!(
                    "block {k}: variable {v} out of range"
                )));
            }
        }
        Ok(())
    }

    pub fn margin_at(&self, theta: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.min_eigenvalue(theta))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn solve_lmi_feasibility(problem: &LmiProblem) -> Result<LmiOutcome> {
    solve_lmi_with(problem, &SdpOptions::default())
}

pub fn solve_lmi_with(problem: &LmiProblem, opts: &SdpOptions) -> Result<LmiOutcome> {
    problem.validate()?;
    let n = problem.n_vars;
    let mut theta = opts
        .theta0
        .clone()
        .filter(|t| t.len() == n)
        .unwrap_or_else(|| DVector::zeros(n));
    if let Some(bd) = problem.var_bound {
        theta.apply(|v| *v = v.clamp(-0.5 * bd, 0.5 * bd));
    }
    let mut t = problem.margin_at(&theta) - 1.0;
    let nu = problem.blocks.iter().map(|b| b.size).sum::<usize>() as f64
        + problem.var_bound.map_or(0.0, |_| 2.0 * n as f64);

    let mut s = 1.0;
    let mut steps = 0;
    'outer: loop {
        // Centering.
        loop {
            if steps >= opts.max_newton {
                break 'outer;
            }
            let Some((grad, hess)) = derivatives(problem, &theta, t, s) else {
                return Err(Error::Solver("iterate left the barrier domain".into()));
            };
            let dir = match newton_direction(&hess, &grad) {
                Some(d) => d,
                None => break 'outer,
            };
            let decrement = -grad.dot(&dir);
            if decrement * 0.5 <= 1e-9 {
                break;
            }
            // Backtracking on the barrier objective.
            let f0 = barrier_value(problem, &theta, t, s).unwrap_or(f64::INFINITY);
            let mut step = 1.0;
            let mut accepted = false;
            let mut moved = 0.0;
            for _ in 0..60 {
                let th = &theta + step * dir.rows(0, n);
                let tt = t + step * dir[n];
                if let Some(f) = barrier_value(problem, &th, tt, s) {
                    if f <= f0 - 0.25 * step * decrement {
                        moved = step * dir.amax();
                        theta = th;
                        t = tt;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            steps += 1;
            // A step below rounding level means the center is as good as it gets.
            if !accepted || moved <= 1e-14 * (1.0 + theta.amax()) {
                break;
            }
            if t > opts.margin_cap {
                break 'outer;
            }
        }
        if nu / s < opts.gap_tol {
            break;
        }
        s *= 8.0;
    }

    let margin = problem.margin_at(&theta);
    Ok(LmiOutcome {
        feasible: margin >= FEAS_MARGIN,
        theta,
        margin,
        newton_steps: steps,
    })
}

fn shifted(block: &LmiBlock, theta: &DVector<f64>, t: f64) -> DMatrix<f64> {
    let mut f = block.evaluate(theta);
    for i in 0..block.size {
        f[(i, i)] -= t;
    }
    (&f + f.transpose()) * 0.5
}

fn barrier_value(p: &LmiProblem, theta: &DVector<f64>, t: f64, s: f64) -> Option<f64> {
    let mut val = -s * t;
    for b in &p.blocks {
        let chol = Cholesky::new(shifted(b, theta, t))?;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        val -= logdet;
    }
    if let Some(bd) = p.var_bound {
        for v in theta.iter() {
            let (lo, hi) = (bd + v, bd - v);
            if lo <= 0.0 || hi <= 0.0 {
                return None;
            }
            val -= lo.ln() + hi.ln();
        }
    }
    val.is_finite().then_some(val)
}

/// Gradient and Hessian of the barrier objective in `(theta, t)`.
fn derivatives(p: &LmiProblem, theta: &DVector<f64>, t: f64, s: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = p.n_vars;
    let mut grad = DVector::zeros(n + 1);
    let mut hess = DMatrix::zeros(n + 1, n + 1);
    grad[n] = -s;
    for b in &p.blocks {
        let z = Cholesky::new(shifted(b, theta, t))?.inverse();
        // U_i = Z F_i ; the margin variable has coefficient -I.
        let mut us: Vec<(usize, DMatrix<f64>)> = b.terms.iter().map(|(v, m)| (*v, &z * m)).collect();
        us.push((n, -&z));
        let ts: Vec<DMatrix<f64>> = us.iter().map(|(_, u)| u.transpose()).collect();
        for (a, (va, ua)) in us.iter().enumerate() {
            grad[*va] -= ua.trace();
            for ((vb, _), ub_t) in us.iter().zip(&ts).skip(a) {
                // tr(U_a U_b)
                let tr = ua.dot(ub_t);
                hess[(*va, *vb)] += tr;
                if va != vb {
                    hess[(*vb, *va)] += tr;
                }
            }
        }
    }
    if let Some(bd) = p.var_bound {
        for (i, v) in theta.iter().enumerate() {
            let (lo, hi) = (bd + v, bd - v);
            grad[i] += -1.0 / lo + 1.0 / hi;
            hess[(i, i)] += 1.0 / (lo * lo) + 1.0 / (hi * hi);
        }
    }
    Some((grad, hess))
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut hr = hess.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(hr) {
            let d = -ch.solve(grad);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}
