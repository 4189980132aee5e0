//! Vertex state-feedback gains and terminal weights from the poly-quadratic
//! stabilization LMIs.
//!
//! For every pair of scheduling vertices `(j, l)` the block
//!
//! ```text
//! [ X_j + X_j' - S_j        *                     *          *   * ]
//! [ A_j X_j                 S_l - B Y_l - Y_l'B'  *          *   * ]
//! [ -W_j                    Z_l'B' - Y_l          Z_l + Z_l' *   * ]  > 0
//! [ Q^1/2 X_j               0                     0          I   * ]
//! [ R^1/2 W_j               0                     0          0   I ]
//! ```
//!
//! must be positive definite, together with `S_j > 0`. Restricted to the
//! subspace `xi_3 = -B' xi_2` the `Y`, `Z` terms cancel and the block implies
//! `(A_j + B K_j)' P_l (A_j + B K_j) - P_j < -(Q + K_j' R K_j)` with
//! `K_j = W_j X_j^-1` and `P_j = S_j^-1`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::optim::sdp::{solve_lmi_with, LmiBlock, LmiProblem, SdpOptions};
use crate::vehicle::LpvModel;

/// Box on every LMI variable (the problem is solved at unit weight scale).
pub const LMI_VAR_BOUND: f64 = 1e4;

/// Vertex gains `K_j` and terminal matrices `P_j` at `p_min` and `p_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
    pub q_syn: DMatrix<f64>,
    pub r_syn: DMatrix<f64>,
    pub p_min: f64,
    pub p_max: f64,
    /// Smallest LMI block eigenvalue at the solver's point.
    pub lmi_margin: f64,
}

/// Interpolated gain and terminal matrix at one scheduling value.
#[derive(Debug, Clone)]
pub struct InterpolatedGain {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Affine coordinate of `p` in `[p_min, p_max]` after clamping.
    pub lambda: f64,
    /// `p` was outside `[p_min, p_max]`.
    pub clamped: bool,
}

impl GainSchedule {
    pub fn k(&self, vertex: usize) -> &DMatrix<f64> {
        if vertex == 0 {
            &self.k1
        } else {
            &self.k2
        }
    }

    pub fn p(&self, vertex: usize) -> &DMatrix<f64> {
        if vertex == 0 {
            &self.p1
        } else {
            &self.p2
        }
    }

    /// Convex combination with `lambda = (p - p_min) / (p_max - p_min)`.
    pub fn interpolate(&self, p: f64) -> InterpolatedGain {
        let span = self.p_max - self.p_min;
        let raw = if span > 0.0 { (p - self.p_min) / span } else { 0.0 };
        let lambda = raw.clamp(0.0, 1.0);
        InterpolatedGain {
            k: &self.k1 * (1.0 - lambda) + &self.k2 * lambda,
            p: &self.p1 * (1.0 - lambda) + &self.p2 * lambda,
            lambda,
            clamped: !(0.0..=1.0).contains(&raw),
        }
    }
}

pub fn interpolate_gain(gains: &GainSchedule, p: f64) -> InterpolatedGain {
    gains.interpolate(p)
}

/// The assembled LMI and the solver's point, kept for independent checks.
#[derive(Debug, Clone)]
pub struct LmiCertificate {
    pub problem: LmiProblem,
    pub theta: DVector<f64>,
    pub margin: f64,
    /// `(j, l)` vertex pair of each block; `None` for the `S_j > 0` blocks.
    pub block_pairs: Vec<Option<(usize, usize)>>,
    /// Factor `c` the weights were divided by before assembly.
    pub weight_scale: f64,
    pub newton_steps: usize,
}

impl LmiCertificate {
    /// Minimum eigenvalue of every block at `theta`.
    pub fn block_min_eigenvalues(&self) -> Vec<f64> {
        self.problem.blocks.iter().map(|b| b.min_eigenvalue(&self.theta)).collect()
    }
}

/// Variable layout of the stacked LMI decision vector. Per vertex:
/// `X` (row-major), `W`, `Y`, `Z`, then the upper triangle of `S`.
struct Layout {
    nx: usize,
    nu: usize,
    nv: usize,
}

impl Layout {
    fn x_len(&self) -> usize {
        self.nx * self.nx
    }
    fn w_len(&self) -> usize {
        self.nu * self.nx
    }
    fn s_len(&self) -> usize {
        self.nx * (self.nx + 1) / 2
    }
    fn per_vertex(&self) -> usize {
        self.x_len() + 2 * self.w_len() + self.nu * self.nu + self.s_len()
    }
    fn n_vars(&self) -> usize {
        self.nv * self.per_vertex()
    }
    fn base(&self, j: usize) -> usize {
        j * self.per_vertex()
    }
    fn x(&self, j: usize, r: usize, c: usize) -> usize {
        self.base(j) + r * self.nx + c
    }
    fn w(&self, j: usize, r: usize, c: usize) -> usize {
        self.base(j) + self.x_len() + r * self.nx + c
    }
    fn y(&self, l: usize, r: usize, c: usize) -> usize {
        self.base(l) + self.x_len() + self.w_len() + r * self.nx + c
    }
    fn z(&self, l: usize, r: usize, c: usize) -> usize {
        self.base(l) + self.x_len() + 2 * self.w_len() + r * self.nu + c
    }
    fn s(&self, j: usize, r: usize, c: usize) -> usize {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        let idx = (0..r).map(|k| self.nx - k).sum::<usize>() + (c - r);
        self.base(j) + self.x_len() + 2 * self.w_len() + self.nu * self.nu + idx
    }

    fn matrix(
        &self,
        theta: &DVector<f64>,
        rows: usize,
        cols: usize,
        idx: impl Fn(usize, usize) -> usize,
    ) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |r, c| theta[idx(r, c)])
    }
}

/// Accumulates coefficient matrices of one block before handing them to
/// [`LmiBlock`].
struct BlockBuilder {
    size: usize,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl BlockBuilder {
    fn new(size: usize) -> Self {
        Self {
            size,
            terms: BTreeMap::new(),
        }
    }

    fn entry(&mut self, var: usize) -> &mut DMatrix<f64> {
        let n = self.size;
        self.terms.entry(var).or_insert_with(|| DMatrix::zeros(n, n))
    }

    /// Entry `(r, c)` of a diagonal sub-block; the caller visits both triangles.
    fn diag(&mut self, var: usize, r: usize, c: usize, coeff: f64) {
        if coeff != 0.0 {
            self.entry(var)[(r, c)] += coeff;
        }
    }

    /// Entry `(r, c)` below the diagonal, mirrored to `(c, r)`.
    fn lower(&mut self, var: usize, r: usize, c: usize, coeff: f64) {
        if coeff != 0.0 {
            let m = self.entry(var);
            m[(r, c)] += coeff;
            m[(c, r)] += coeff;
        }
    }

    fn finish(self, f0: DMatrix<f64>) -> LmiBlock {
        let mut blk = LmiBlock::new(self.size);
        blk.f0 = f0;
        blk.terms = self.terms.into_iter().collect();
        blk
    }
}

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidParameter("synthesis weights must be symmetric".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::InvalidParameter(
            "synthesis weights must be positive definite".into(),
        ));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Builds the LMI blocks for the vertex matrices `a_vertices`. Returns the
/// problem and the `(j, l)` pair of each block (`None` for `S_j > 0`).
pub fn assemble_lmi(
    a_vertices: &[DMatrix<f64>],
    b: &DMatrix<f64>,
    q_syn: &DMatrix<f64>,
    r_syn: &DMatrix<f64>,
) -> Result<(LmiProblem, Vec<Option<(usize, usize)>>)> {
    let nv = a_vertices.len();
    let (nx, nu) = b.shape();
    if nv == 0 || a_vertices.iter().any(|a| a.shape() != (nx, nx)) {
        return Err(Error::InvalidParameter("vertex matrices must be nx x nx".into()));
    }
    if q_syn.shape() != (nx, nx) || r_syn.shape() != (nu, nu) {
        return Err(Error::InvalidParameter(
            "weight dimensions do not match the model".into(),
        ));
    }
    let qh = sym_sqrt(q_syn)?;
    let rh = sym_sqrt(r_syn)?;
    let lay = Layout { nx, nu, nv };
    let size = 3 * nx + 2 * nu;
    let (o2, o3, o4, o5) = (nx, 2 * nx, 2 * nx + nu, 3 * nx + nu);

    let mut blocks = Vec::new();
    let mut pairs = Vec::new();
    for j in 0..nv {
        let a = &a_vertices[j];
        for l in 0..nv {
            let mut bb = BlockBuilder::new(size);
            for r in 0..nx {
                for c in 0..nx {
                    // X_j + X_j' - S_j
                    bb.diag(lay.x(j, r, c), r, c, 1.0);
                    bb.diag(lay.x(j, c, r), r, c, 1.0);
                    bb.diag(lay.s(j, r, c), r, c, -1.0);
                    // S_l - B Y_l - Y_l' B'
                    bb.diag(lay.s(l, r, c), o2 + r, o2 + c, 1.0);
                    for k in 0..nu {
                        bb.diag(lay.y(l, k, c), o2 + r, o2 + c, -b[(r, k)]);
                        bb.diag(lay.y(l, k, r), o2 + r, o2 + c, -b[(c, k)]);
                    }
                    for k in 0..nx {
                        // A_j X_j and Q^1/2 X_j
                        bb.lower(lay.x(j, k, c), o2 + r, c, a[(r, k)]);
                        bb.lower(lay.x(j, k, c), o4 + r, c, qh[(r, k)]);
                    }
                }
            }
            for r in 0..nu {
                for c in 0..nx {
                    bb.lower(lay.w(j, r, c), o3 + r, c, -1.0);
                    // Z_l' B' - Y_l
                    bb.lower(lay.y(l, r, c), o3 + r, o2 + c, -1.0);
                    for k in 0..nu {
                        bb.lower(lay.z(l, k, r), o3 + r, o2 + c, b[(c, k)]);
                        bb.lower(lay.w(j, k, c), o5 + r, c, rh[(r, k)]);
                    }
                }
                for c in 0..nu {
                    bb.diag(lay.z(l, r, c), o3 + r, o3 + c, 1.0);
                    bb.diag(lay.z(l, c, r), o3 + r, o3 + c, 1.0);
                }
            }
            let mut f0 = DMatrix::zeros(size, size);
            for i in o4..size {
                f0[(i, i)] = 1.0;
            }
            blocks.push(bb.finish(f0));
            pairs.push(Some((j, l)));
        }
    }
    for j in 0..nv {
        let mut bb = BlockBuilder::new(nx);
        for r in 0..nx {
            for c in 0..nx {
                bb.diag(lay.s(j, r, c), r, c, 1.0);
            }
        }
        blocks.push(bb.finish(DMatrix::zeros(nx, nx)));
        pairs.push(None);
    }
    Ok((
        LmiProblem {
            n_vars: lay.n_vars(),
            blocks,
            // Z_l > 0 with Y_l = -Z_l B' is a recession direction of the
            // block cone; the box keeps the barrier bounded below.
            var_bound: Some(LMI_VAR_BOUND),
        },
        pairs,
    ))
}

/// Largest eigenvalue of the Riccati solution over the vertices, used to
/// bring the LMI to unit scale. Falls back to 1 when value iteration does not
/// settle (e.g. an unstabilizable vertex).
pub fn weight_scale(
    a_vertices: &[DMatrix<f64>],
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> f64 {
    let mut scale: f64 = 0.0;
    for a in a_vertices {
        let mut p = q.clone();
        let mut settled = false;
        for _ in 0..20_000 {
            let bp = b.transpose() * &p;
            let Some(inv) = (r + &bp * b).try_inverse() else {
                break;
            };
            let next = q + a.transpose() * &p * a
                - a.transpose() * bp.transpose() * inv * &bp * a;
            let next = (&next + next.transpose()) * 0.5;
            let delta = (&next - &p).amax();
            p = next;
            if !p.amax().is_finite() {
                break;
            }
            if delta <= 1e-10 * p.amax() {
                settled = true;
                break;
            }
        }
        if !settled {
            return 1.0;
        }
        scale = scale.max(SymmetricEigen::new(p).eigenvalues.max());
    }
    if scale.is_finite() && scale > 0.0 {
        scale
    } else {
        1.0
    }
}

/// Solves the vertex LMIs and recovers `K_j = W_j X_j^-1`, `P_j = c S_j^-1`.
///
/// The blocks are assembled with weights `Q / c`, `R / c`. Scaling the first
/// three block rows and columns by `sqrt(c)` maps this LMI onto the one with
/// `Q`, `R` exactly (same gains, `P` multiplied by `c`), so the feasibility
/// margin is measured at unit scale instead of on `S ~ 1/c`.
pub fn synthesize_vertex_gains(
    a_vertices: &[DMatrix<f64>],
    b: &DMatrix<f64>,
    q_syn: &DMatrix<f64>,
    r_syn: &DMatrix<f64>,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, LmiCertificate)> {
    let scale = weight_scale(a_vertices, b, q_syn, r_syn);
    let (problem, pairs) = assemble_lmi(a_vertices, b, &(q_syn / scale), &(r_syn / scale))?;
    let out = solve_lmi_with(&problem, &SdpOptions::default())?;
    if !out.feasible {
        return Err(Error::LmiInfeasible { margin: out.margin });
    }
    let (nx, nu) = b.shape();
    let lay = Layout {
        nx,
        nu,
        nv: a_vertices.len(),
    };
    let mut ks = Vec::new();
    let mut ps = Vec::new();
    for j in 0..a_vertices.len() {
        let x = lay.matrix(&out.theta, nx, nx, |r, c| lay.x(j, r, c));
        let w = lay.matrix(&out.theta, nu, nx, |r, c| lay.w(j, r, c));
        let s = lay.matrix(&out.theta, nx, nx, |r, c| lay.s(j, r, c));
        let sv = x.clone().svd(false, false).singular_values;
        let cond = sv.max() / sv.min().max(1e-300);
        if cond > 1e12 {
            return Err(Error::IllConditioned { cond });
        }
        let singular = || Error::IllConditioned { cond: f64::INFINITY };
        ks.push(w * x.try_inverse().ok_or_else(singular)?);
        let p = s.try_inverse().ok_or_else(singular)? * scale;
        ps.push((&p + p.transpose()) * 0.5);
    }
    let cert = LmiCertificate {
        problem,
        margin: out.margin,
        theta: out.theta,
        block_pairs: pairs,
        weight_scale: scale,
        newton_steps: out.newton_steps,
    };
    Ok((ks, ps, cert))
}

/// Gain schedule at the two scheduling vertices of `model`.
pub fn synthesize_gains(
    model: &LpvModel,
    q_syn: &DMatrix<f64>,
    r_syn: &DMatrix<f64>,
) -> Result<(GainSchedule, LmiCertificate)> {
    let verts = model.vertex_matrices();
    let (ks, ps, cert) = synthesize_vertex_gains(&verts, &model.b, q_syn, r_syn)?;
    let gains = GainSchedule {
        k1: ks[0].clone(),
        k2: ks[1].clone(),
        p1: ps[0].clone(),
        p2: ps[1].clone(),
        q_syn: q_syn.clone(),
        r_syn: r_syn.clone(),
        p_min: model.p_min,
        p_max: model.p_max,
        lmi_margin: cert.margin,
    };
    Ok((gains, cert))
}

/// Spectral radius of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Largest eigenvalue of `(A + B K)' P_next (A + B K) - P_now + Q + K' R K`.
pub fn lyapunov_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    p_now: &DMatrix<f64>,
    p_next: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> f64 {
    let acl = a + b * k;
    let m = acl.transpose() * p_next * &acl - p_now + q + k.transpose() * r * k;
    SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues.max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn symmetric_index_is_a_bijection() {
        let lay = Layout { nx: 4, nu: 1, nv: 2 };
        let mut seen = std::collections::HashSet::new();
        for j in 0..2 {
            for r in 0..4 {
                for c in 0..4 {
                    seen.insert(lay.x(j, r, c));
                    if r <= c {
                        seen.insert(lay.s(j, r, c));
                    }
                    assert_eq!(lay.s(j, r, c), lay.s(j, c, r));
                }
                seen.insert(lay.w(j, 0, r));
                seen.insert(lay.y(j, 0, r));
            }
            seen.insert(lay.z(j, 0, 0));
        }
        assert_eq!(seen.len(), lay.n_vars());
        assert_eq!(lay.n_vars(), 70);
    }

    #[test]
    fn blocks_reconstruct_symbolic_form() {
        // Evaluate the assembled block at a random point and compare with the
        // block written out from matrices.
        let a = vec![dmatrix![1.0, 0.1; -0.2, 0.9], dmatrix![1.0, 0.2; -0.1, 0.8]];
        let b = dmatrix![0.0; 0.1];
        let q = DMatrix::identity(2, 2) * 2.0;
        let r = dmatrix![0.5];
        let (prob, pairs) = assemble_lmi(&a, &b, &q, &r).unwrap();
        let lay = Layout { nx: 2, nu: 1, nv: 2 };
        let theta = DVector::from_fn(prob.n_vars, |i, _| ((i * 7919) % 13) as f64 / 13.0 - 0.4);
        let xm = |j| lay.matrix(&theta, 2, 2, |r, c| lay.x(j, r, c));
        let wm = |j| lay.matrix(&theta, 1, 2, |r, c| lay.w(j, r, c));
        let ym = |j| lay.matrix(&theta, 1, 2, |r, c| lay.y(j, r, c));
        let zm = |j| lay.matrix(&theta, 1, 1, |r, c| lay.z(j, r, c));
        let sm = |j| lay.matrix(&theta, 2, 2, |r, c| lay.s(j, r, c));
        let qh = sym_sqrt(&q).unwrap();
        let rh = sym_sqrt(&r).unwrap();
        for (blk, pair) in prob.blocks.iter().zip(&pairs) {
            let got = blk.evaluate(&theta);
            let Some((j, l)) = *pair else {
                let j = usize::from(got != sm(0));
                assert!((got - sm(j)).amax() < 1e-12);
                continue;
            };
            let x = xm(j);
            let mut e = DMatrix::zeros(8, 8);
            e.view_mut((0, 0), (2, 2)).copy_from(&(&x + x.transpose() - sm(j)));
            e.view_mut((2, 0), (2, 2)).copy_from(&(&a[j] * &x));
            e.view_mut((2, 2), (2, 2))
                .copy_from(&(sm(l) - &b * ym(l) - ym(l).transpose() * b.transpose()));
            e.view_mut((4, 0), (1, 2)).copy_from(&(-wm(j)));
            e.view_mut((4, 2), (1, 2)).copy_from(&(zm(l).transpose() * b.transpose() - ym(l)));
            e.view_mut((4, 4), (1, 1)).copy_from(&(zm(l) + zm(l).transpose()));
            e.view_mut((5, 0), (2, 2)).copy_from(&(&qh * &x));
            e.view_mut((7, 0), (1, 2)).copy_from(&(&rh * wm(j)));
            e.view_mut((5, 5), (3, 3)).fill_with_identity();
            for r in 0..8 {
                for c in (r + 1)..8 {
                    e[(r, c)] = e[(c, r)];
                }
            }
            assert!((got - e).amax() < 1e-12, "block ({j},{l})");
        }
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let g = GainSchedule {
            k1: dmatrix![1.0, 2.0],
            k2: dmatrix![3.0, 6.0],
            p1: DMatrix::identity(2, 2),
            p2: DMatrix::identity(2, 2) * 3.0,
            q_syn: DMatrix::identity(2, 2),
            r_syn: dmatrix![1.0],
            p_min: 0.1,
            p_max: 0.3,
            lmi_margin: 1.0,
        };
        let lo = g.interpolate(0.1);
        assert_eq!(lo.k, g.k1);
        assert!(!lo.clamped);
        let mid = g.interpolate(0.2);
        assert!((mid.k - dmatrix![2.0, 4.0]).amax() < 1e-12);
        assert!((mid.p - DMatrix::identity(2, 2) * 2.0).amax() < 1e-12);
        let out = g.interpolate(0.5);
        assert!(out.clamped);
        assert_eq!(out.k, g.k2);
    }
}
