//! Convex polytopes in halfspace (`G x <= h`) and vertex representation.
//!
//! Vertex enumeration uses the double-description method on the homogenized
//! cone `{(x, t) : h t - G x >= 0, t >= 0}`; rows are inserted in
//! lexicographic order of their normals so the output is reproducible.
//! Facet enumeration runs the same routine on the polar of the vertex set.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{solve_lp, QpStatus};

/// Membership / feasibility tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Vertex deduplication tolerance, relative to the polytope diameter.
pub const DEDUP_TOL: f64 = 1e-7;
/// Zero test for cone rays in double description.
const RANK_TOL: f64 = 1e-6;
const DD_ZERO_TOL: f64 = 1e-9;
const SUPPORT_GAP_TOL: f64 = 1e-6;

/// `{x : G x <= h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "HRepr", try_from = "HRepr")]
pub struct HPolytope {
    g: DMatrix<f64>,
    h: DVector<f64>,
}

/// Convex hull of a finite point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VRepr", try_from = "VRepr")]
pub struct VPolytope {
    dim: usize,
    vertices: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
struct HRepr {
    dim: usize,
    g: Vec<Vec<f64>>,
    h: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct VRepr {
    dim: usize,
    vertices: Vec<Vec<f64>>,
}

impl From<HPolytope> for HRepr {
    fn from(p: HPolytope) -> Self {
        HRepr {
            dim: p.dim(),
            g: p.g.row_iter().map(|r| r.iter().copied().collect()).collect(),
            h: p.h.iter().copied().collect(),
        }
    }
}

impl TryFrom<HRepr> for HPolytope {
    type Error = Error;
    fn try_from(r: HRepr) -> Result<Self> {
        if r.g.iter().any(|row| row.len() != r.dim) {
            return Err(Error::DimensionMismatch {
                expected: r.dim,
                got: r.g.iter().map(Vec::len).find(|l| *l != r.dim).unwrap_or(0),
            });
        }
        let g = DMatrix::from_row_iterator(r.g.len(), r.dim, r.g.into_iter().flatten());
        HPolytope::new(g, DVector::from_vec(r.h))
    }
}

impl From<VPolytope> for VRepr {
    fn from(p: VPolytope) -> Self {
        VRepr {
            dim: p.dim,
            vertices: p.vertices.iter().map(|v| v.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<VRepr> for VPolytope {
    type Error = Error;
    fn try_from(r: VRepr) -> Result<Self> {
        VPolytope::new(r.dim, r.vertices.into_iter().map(DVector::from_vec).collect())
    }
}

/// Support function `max_{x in P} d'x`.
pub trait Support {
    fn support(&self, d: &DVector<f64>) -> Result<f64>;
}

impl HPolytope {
    pub fn new(g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if g.nrows() != h.len() {
            return Err(Error::DimensionMismatch {
                expected: g.nrows(),
                got: h.len(),
            });
        }
        if g.ncols() == 0 {
            return Err(Error::InvalidParameter("zero-dimensional polytope".into()));
        }
        Ok(Self { g, h })
    }

    /// `{x : lo <= x <= hi}` as stacked `[I; -I]`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        let d = lo.len();
        let mut g = DMatrix::zeros(2 * d, d);
        let mut h = DVector::zeros(2 * d);
        for i in 0..d {
            g[(i, i)] = 1.0;
            h[i] = hi[i];
            g[(d + i, i)] = -1.0;
            h[d + i] = -lo[i];
        }
        Self::new(g, h)
    }

    /// `{x : |x_i| <= bound_i}`.
    pub fn symmetric_box(bounds: &[f64]) -> Result<Self> {
        let lo: Vec<f64> = bounds.iter().map(|b| -b).collect();
        Self::from_box(&lo, bounds)
    }

    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.h.len()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// `max_i (G x - h)_i`; negative inside.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.g * x - &self.h).max()
    }

    pub fn intersect(&self, other: &HPolytope) -> Result<HPolytope> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let (m1, m2, d) = (self.n_rows(), other.n_rows(), self.dim());
        let mut g = DMatrix::zeros(m1 + m2, d);
        g.view_mut((0, 0), (m1, d)).copy_from(&self.g);
        g.view_mut((m1, 0), (m2, d)).copy_from(&other.g);
        let mut h = DVector::zeros(m1 + m2);
        h.rows_mut(0, m1).copy_from(&self.h);
        h.rows_mut(m1, m2).copy_from(&other.h);
        HPolytope::new(g, h)
    }

    /// Rows scaled to unit Euclidean norm; zero rows dropped (they must have `h >= 0`).
    pub fn normalized(&self) -> Result<HPolytope> {
        let mut rows = Vec::new();
        for i in 0..self.n_rows() {
            let n = self.g.row(i).norm();
            if n <= 1e-300 {
                if self.h[i] < -MEMBERSHIP_TOL {
                    return Err(Error::EmptyPolytope);
                }
                continue;
            }
            rows.push((self.g.row(i) / n, self.h[i] / n));
        }
        let d = self.dim();
        let g = DMatrix::from_rows(&rows.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>());
        let g = if rows.is_empty() { DMatrix::zeros(0, d) } else { g };
        let h = DVector::from_iterator(rows.len(), rows.iter().map(|(_, b)| *b));
        HPolytope::new(g, h)
    }

    /// Collapses rows with identical normalized normals to the tightest one.
    fn dedup_rows(&self) -> Result<HPolytope> {
        let norm = self.normalized()?;
        let d = norm.dim();
        let mut idx: Vec<usize> = (0..norm.n_rows()).collect();
        idx.sort_by(|&a, &b| lex_cmp_rows(&norm.g, a, b).then(norm.h[a].total_cmp(&norm.h[b])));
        let mut keep: Vec<usize> = Vec::new();
        for i in idx {
            if let Some(&last) = keep.last() {
                if (norm.g.row(i) - norm.g.row(last)).amax() <= 1e-12 {
                    continue;
                }
            }
            keep.push(i);
        }
        let g = DMatrix::from_fn(keep.len(), d, |r, c| norm.g[(keep[r], c)]);
        let h = DVector::from_iterator(keep.len(), keep.iter().map(|&i| norm.h[i]));
        HPolytope::new(g, h)
    }

    /// Drops every halfspace that can be removed without changing the set.
    /// One LP per candidate row: maximize the row's left-hand side over the
    /// remaining rows (capped one unit above its offset).
    pub fn remove_redundant(&self) -> Result<HPolytope> {
        let p = self.dedup_rows()?;
        let d = p.dim();
        let m = p.n_rows();
        let mut active = vec![true; m];
        for i in 0..m {
            let others: Vec<usize> = (0..m).filter(|&k| k != i && active[k]).collect();
            let rows = others.len() + 1;
            let mut g = DMatrix::zeros(rows, d);
            let mut h = DVector::zeros(rows);
            for (r, &k) in others.iter().enumerate() {
                g.row_mut(r).copy_from(&p.g.row(k));
                h[r] = p.h[k];
            }
            g.row_mut(rows - 1).copy_from(&p.g.row(i));
            h[rows - 1] = p.h[i] + 1.0;
            let c = -p.g.row(i).transpose();
            let sol = solve_lp(&c, &g, &h)?;
            match sol.status {
                QpStatus::Infeasible => return Err(Error::EmptyPolytope),
                QpStatus::Optimal => {
                    let value = -sol.objective;
                    if value <= p.h[i] + MEMBERSHIP_TOL * p.h[i].abs().max(1.0) {
                        active[i] = false;
                    }
                }
                _ => {}
            }
        }
        let keep: Vec<usize> = (0..m).filter(|&i| active[i]).collect();
        if keep.is_empty() {
            return Err(Error::UnboundedPolytope);
        }
        let g = DMatrix::from_fn(keep.len(), d, |r, c| p.g[(keep[r], c)]);
        let h = DVector::from_iterator(keep.len(), keep.iter().map(|&i| p.h[i]));
        HPolytope::new(g, h)
    }

    /// Vertices by double description.
    pub fn vertex_enumeration(&self) -> Result<VPolytope> {
        let p = self.dedup_rows()?;
        let d = p.dim();
        let m = p.n_rows();
        // Cone rows a_k = [-g_k, h_k] (a_k . y >= 0), plus t >= 0.
        let mut rows: Vec<DVector<f64>> = (0..m)
            .map(|k| {
                let mut a = DVector::zeros(d + 1);
                a.rows_mut(0, d).copy_from(&(-p.g.row(k).transpose()));
                a[d] = p.h[k];
                a / (1.0 + p.h[k] * p.h[k]).sqrt()
            })
            .collect();
        let mut t_row = DVector::zeros(d + 1);
        t_row[d] = 1.0;
        rows.push(t_row);
        // Homogenizing row first, then lexicographic order of normals.
        let mut order: Vec<usize> = vec![m];
        let mut rest: Vec<usize> = (0..m).collect();
        rest.sort_by(|&a, &b| lex_cmp_rows(&p.g, a, b).then(p.h[a].total_cmp(&p.h[b])));
        order.extend(rest);

        let rays = double_description(&rows, &order, d + 1)?;
        let scale = p.h.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
        let mut vertices = Vec::new();
        let mut recession = false;
        for ray in rays {
            let r = &ray.v;
            let t = r[d];
            let x = r.rows(0, d).into_owned();
            if t > DD_ZERO_TOL * (1.0 + x.amax() / scale) {
                vertices.push(p.polish_vertex(x / t, &ray.zeros));
            } else {
                recession = true;
            }
        }
        if vertices.is_empty() {
            return Err(Error::EmptyPolytope);
        }
        if recession {
            return Err(Error::UnboundedPolytope);
        }
        VPolytope::new(d, vertices).map(|v| v.deduped())
    }

    /// Re-solves a vertex from its active rows; the incremental ray
    /// combinations of double description drift by a few ulps per step.
    fn polish_vertex(&self, x: DVector<f64>, active: &Bits) -> DVector<f64> {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&k| active.get(k)).collect();
        let d = self.dim();
        if rows.len() < d {
            return x;
        }
        let ga = DMatrix::from_fn(rows.len(), d, |r, c| self.g[(rows[r], c)]);
        let ha = DVector::from_iterator(rows.len(), rows.iter().map(|&k| self.h[k]));
        let svd = ga.clone().svd(true, true);
        if svd.rank(1e-9 * svd.singular_values.max()) < d {
            return x;
        }
        let residual = |z: &DVector<f64>| (&ga * z - &ha).amax();
        match svd.solve(&ha, 1e-12) {
            Ok(y) if (&y - &x).amax() <= 1e-6 * (1.0 + x.amax()) && residual(&y) < residual(&x) => y,
            _ => x,
        }
    }

    /// Support via LP.
    pub fn support_lp(&self, d: &DVector<f64>) -> Result<f64> {
        if d.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: d.len(),
            });
        }
        let sol = solve_lp(&(-d), &self.g, &self.h)?;
        match sol.status {
            QpStatus::Optimal => Ok(-sol.objective),
            QpStatus::Infeasible => Err(Error::EmptyPolytope),
            // Near-degenerate optimal faces can stall the interior point a
            // hair short of its tolerance; a feasible point with a small gap
            // still gives the value to within that gap.
            QpStatus::MaxIter if sol.kkt.primal <= 1e-9 && sol.kkt.max() <= SUPPORT_GAP_TOL => Ok(-sol.objective),
            QpStatus::Unbounded => Err(Error::UnboundedDirection),
            st => Err(Error::Solver(format!("support LP ended with {st:?}"))),
        }
    }

    /// Scales the set by `alpha >= 0` about the origin.
    pub fn scaled(&self, alpha: f64) -> HPolytope {
        HPolytope {
            g: self.g.clone(),
            h: &self.h * alpha,
        }
    }

    /// `{x : G x <= h}` translated by `t`.
    pub fn translated(&self, t: &DVector<f64>) -> HPolytope {
        HPolytope {
            g: self.g.clone(),
            h: &self.h + &self.g * t,
        }
    }
}

impl Support for HPolytope {
    fn support(&self, d: &DVector<f64>) -> Result<f64> {
        self.support_lp(d)
    }
}

impl VPolytope {
    pub fn new(dim: usize, vertices: Vec<DVector<f64>>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::EmptyPolytope);
        }
        if let Some(v) = vertices.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        Ok(Self { dim, vertices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn diameter(&self) -> f64 {
        let mut best = 0.0_f64;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                best = best.max((a - b).norm());
            }
        }
        best
    }

    /// Drops near-duplicate points (tolerance relative to the diameter) and
    /// sorts the rest lexicographically.
    pub fn deduped(mut self) -> VPolytope {
        self.vertices.sort_by(lex_cmp);
        let tol = DEDUP_TOL * self.diameter().max(1.0);
        let mut out: Vec<DVector<f64>> = Vec::with_capacity(self.vertices.len());
        for v in self.vertices {
            if !out.iter().any(|w| (w - &v).norm() <= tol) {
                out.push(v);
            }
        }
        VPolytope {
            dim: self.dim,
            vertices: out,
        }
    }

    /// Removes points lying in the convex hull of the others. A point is kept
    /// when some direction `c` (`|c|_inf <= 1`) strictly separates it.
    pub fn remove_redundant(&self) -> Result<VPolytope> {
        let base = self.clone().deduped();
        let d = base.dim;
        let n = base.vertices.len();
        if n <= 1 {
            return Ok(base);
        }
        let scale = base.diameter().max(1e-300);
        let mut keep = vec![true; n];
        for i in 0..n {
            let others: Vec<usize> = (0..n).filter(|&k| k != i && keep[k]).collect();
            if others.is_empty() {
                continue;
            }
            // variables (c, s): max c'p - s  s.t. c'v_k - s <= 0, -1 <= c <= 1
            let rows = others.len() + 2 * d;
            let mut g = DMatrix::zeros(rows, d + 1);
            let mut h = DVector::zeros(rows);
            for (r, &k) in others.iter().enumerate() {
                let v = &base.vertices[k] - &base.vertices[i];
                g.view_mut((r, 0), (1, d)).copy_from(&v.transpose());
                g[(r, d)] = -1.0;
            }
            for j in 0..d {
                g[(others.len() + 2 * j, j)] = 1.0;
                h[others.len() + 2 * j] = 1.0;
                g[(others.len() + 2 * j + 1, j)] = -1.0;
                h[others.len() + 2 * j + 1] = 1.0;
            }
            // Shifted so that p_i sits at the origin: objective -s.
            let mut f = DVector::zeros(d + 1);
            f[d] = 1.0;
            let sol = solve_lp(&f, &g, &h)?;
            let gap = if sol.status == QpStatus::Optimal {
                -sol.objective
            } else {
                0.0
            };
            if gap <= DEDUP_TOL * scale {
                keep[i] = false;
            }
        }
        let vertices = (0..n).filter(|&i| keep[i]).map(|i| base.vertices[i].clone()).collect();
        VPolytope::new(d, vertices)
    }

    /// Facet description of the hull; requires a full-dimensional point set.
    pub fn halfspace_conversion(&self) -> Result<HPolytope> {
        let d = self.dim;
        let base = self.clone().deduped();
        let n = base.vertices.len();
        let centroid = base.vertices.iter().fold(DVector::zeros(d), |acc, v| acc + v) / n as f64;
        let centered = DMatrix::from_fn(n, d, |r, c| base.vertices[r][c] - centroid[c]);
        let affine_dim = numerical_rank(&centered, 1e-9 * base.diameter().max(1e-300));
        if affine_dim < d {
            return Err(Error::DegenerateHull { affine_dim, dim: d });
        }
        // Polar of the centered hull: {a : a'(v - c) <= 1}; its vertices are facets.
        let polar = HPolytope::new(centered, DVector::from_element(n, 1.0))?;
        let facets = polar.vertex_enumeration()?;
        let m = facets.len();
        let mut g = DMatrix::zeros(m, d);
        let mut h = DVector::zeros(m);
        for (k, a) in facets.vertices.iter().enumerate() {
            let norm = a.norm();
            g.row_mut(k).copy_from(&(a.transpose() / norm));
            h[k] = (1.0 + a.dot(&centroid)) / norm;
        }
        HPolytope::new(g, h)
    }

    /// `{M v + t}` over the vertices, deduplicated.
    pub fn affine_image(&self, m: &DMatrix<f64>, t: &DVector<f64>) -> Result<VPolytope> {
        if m.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: m.ncols(),
            });
        }
        if t.len() != m.nrows() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: t.len(),
            });
        }
        let vertices = self.vertices.iter().map(|v| m * v + t).collect();
        Ok(VPolytope::new(m.nrows(), vertices)?.deduped())
    }

    /// Convex hull of all pairwise vertex sums with redundant points removed.
    pub fn minkowski_sum(&self, other: &VPolytope) -> Result<VPolytope> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut pts = Vec::with_capacity(self.len() * other.len());
        for a in &self.vertices {
            for b in &other.vertices {
                pts.push(a + b);
            }
        }
        VPolytope::new(self.dim, pts)?.remove_redundant()
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        let mut lo = self.vertices[0].clone();
        let mut hi = self.vertices[0].clone();
        for v in &self.vertices[1..] {
            for i in 0..self.dim {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }
}

impl Support for VPolytope {
    fn support(&self, d: &DVector<f64>) -> Result<f64> {
        if d.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: d.len(),
            });
        }
        Ok(self
            .vertices
            .iter()
            .map(|v| v.dot(d))
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

fn lex_cmp_rows(g: &DMatrix<f64>, a: usize, b: usize) -> Ordering {
    (0..g.ncols())
        .map(|c| g[(a, c)].total_cmp(&g[(b, c)]))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().filter(|s| **s > tol).count()
}

#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn and(&self, o: &Bits) -> Bits {
        Bits(self.0.iter().zip(&o.0).map(|(a, b)| a & b).collect())
    }
    fn count(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
}

struct Ray {
    v: DVector<f64>,
    zeros: Bits,
}

/// Algebraic adjacency test: two extreme rays are adjacent iff the rows
/// tight at both have rank `dim - 2`. Unlike the combinatorial test this
/// tolerates rows that are tight only up to rounding.
fn spans_edge(rows: &[DVector<f64>], common: &Bits, dim: usize) -> bool {
    // Modified Gram-Schmidt with early exit once the rank exceeds dim - 2.
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(dim);
    for k in (0..rows.len()).filter(|&k| common.get(k)) {
        let mut r = rows[k].clone();
        let n0 = r.norm();
        for q in &basis {
            let c = r.dot(q);
            r.axpy(-c, q, 1.0);
        }
        let n = r.norm();
        if n > RANK_TOL * n0.max(1e-300) {
            basis.push(r / n);
            if basis.len() + 1 >= dim {
                return false;
            }
        }
    }
    basis.len() + 2 == dim
}

/// Recomputes a ray as the null vector of its zero-set rows so rounding
/// does not accumulate across insertions.
fn polish_ray(rows: &[DVector<f64>], zeros: &Bits, v: DVector<f64>) -> DVector<f64> {
    let dim = v.len();
    let active: Vec<usize> = (0..rows.len()).filter(|&k| zeros.get(k)).collect();
    if active.len() + 1 < dim {
        return v;
    }
    let a = DMatrix::from_fn(active.len(), dim, |r, c| rows[active[r]][c]);
    let svd = (a.transpose() * &a).symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| svd.eigenvalues[i].total_cmp(&svd.eigenvalues[j]));
    // Need a one-dimensional null space.
    if svd.eigenvalues[order[1]] <= 1e-12 {
        return v;
    }
    let mut u = svd.eigenvectors.column(order[0]).into_owned();
    if u.dot(&v) < 0.0 {
        u = -u;
    }
    if (&u - &v).amax() > 1e-6 || (&a * &u).amax() >= (&a * &v).amax() {
        return v;
    }
    u
}

/// Collapses rays closer than the zero tolerance into one, uniting their
/// zero sets. Near-duplicates otherwise mask each other in the adjacency test.
fn merge_close_rays(rays: Vec<Ray>) -> Vec<Ray> {
    let tol = 10.0 * DD_ZERO_TOL;
    let mut idx: Vec<usize> = (0..rays.len()).collect();
    idx.sort_by(|&a, &b| rays[a].v[0].total_cmp(&rays[b].v[0]));
    let mut merged_into: Vec<Option<usize>> = vec![None; rays.len()];
    let mut extra: Vec<(usize, usize)> = Vec::new();
    for (pos, &a) in idx.iter().enumerate() {
        if merged_into[a].is_some() {
            continue;
        }
        for &b in &idx[pos + 1..] {
            if rays[b].v[0] - rays[a].v[0] > tol {
                break;
            }
            if merged_into[b].is_none() && (&rays[a].v - &rays[b].v).amax() <= tol {
                merged_into[b] = Some(a);
                extra.push((a, b));
            }
        }
    }
    if extra.is_empty() {
        return rays;
    }
    let mut rays: Vec<Option<Ray>> = rays.into_iter().map(Some).collect();
    for (a, b) in extra {
        let zb = rays[b].take().map(|r| r.zeros);
        if let (Some(ra), Some(zb)) = (rays[a].as_mut(), zb) {
            for (x, y) in ra.zeros.0.iter_mut().zip(&zb.0) {
                *x |= y;
            }
        }
    }
    rays.into_iter().flatten().collect()
}

/// Extreme rays of the pointed cone `{y : a_k . y >= 0}`.
fn double_description(rows: &[DVector<f64>], order: &[usize], dim: usize) -> Result<Vec<Ray>> {
    let m = rows.len();
    // Initial basis: greedily pick independent rows in insertion order.
    let mut basis: Vec<usize> = Vec::new();
    let mut q_basis: Vec<DVector<f64>> = Vec::new();
    for &k in order {
        let mut r = rows[k].clone();
        for q in &q_basis {
            let c = r.dot(q);
            r -= q * c;
        }
        let n = r.norm();
        if n > 1e-10 {
            q_basis.push(r / n);
            basis.push(k);
            if basis.len() == dim {
                break;
            }
        }
    }
    if basis.len() < dim {
        // Non-pointed cone: the polytope has a lineality direction.
        return Err(Error::UnboundedPolytope);
    }
    let a_b = DMatrix::from_fn(dim, dim, |r, c| rows[basis[r]][c]);
    let inv = a_b
        .try_inverse()
        .ok_or_else(|| Error::Solver("singular initial basis".into()))?;
    let mut rays: Vec<Ray> = (0..dim)
        .map(|j| {
            let v = inv.column(j).into_owned();
            let v = &v / v.norm();
            let mut zeros = Bits::new(m);
            for (r, &k) in basis.iter().enumerate() {
                if r != j {
                    zeros.set(k);
                }
            }
            Ray { v, zeros }
        })
        .collect();

    let need = dim.saturating_sub(2) as u32;
    let mut processed: Vec<usize> = basis.clone();
    for &k in order.iter().filter(|k| !basis.contains(k)) {
        let a = &rows[k];
        let vals: Vec<f64> = rays.iter().map(|r| a.dot(&r.v)).collect();
        processed.push(k);
        let pos: Vec<usize> = (0..rays.len()).filter(|&i| vals[i] > DD_ZERO_TOL).collect();
        let neg: Vec<usize> = (0..rays.len()).filter(|&i| vals[i] < -DD_ZERO_TOL).collect();
        if neg.is_empty() {
            for (i, r) in rays.iter_mut().enumerate() {
                if vals[i].abs() <= DD_ZERO_TOL {
                    r.zeros.set(k);
                }
            }
            continue;
        }
        let mut new_rays = Vec::new();
        for &ip in &pos {
            for &in_ in &neg {
                let common = rays[ip].zeros.and(&rays[in_].zeros);
                if common.count() < need {
                    continue;
                }
                if !spans_edge(rows, &common, dim) {
                    continue;
                }
                let v = &rays[in_].v * vals[ip] - &rays[ip].v * vals[in_];
                let v = &v / v.norm();
                // Degenerate vertices can be tight on more rows than the
                // parents share; record all of them so later adjacency
                // tests see the full zero set.
                let mut zeros = common;
                for &q in &processed {
                    if rows[q].dot(&v).abs() <= DD_ZERO_TOL {
                        zeros.set(q);
                    }
                }
                zeros.set(k);
                let v = polish_ray(rows, &zeros, v);
                new_rays.push(Ray { v, zeros });
            }
        }
        let mut kept: Vec<Ray> = Vec::with_capacity(rays.len() + new_rays.len());
        for (i, mut r) in rays.into_iter().enumerate() {
            if vals[i] < -DD_ZERO_TOL {
                continue;
            }
            if vals[i].abs() <= DD_ZERO_TOL {
                r.zeros.set(k);
            }
            kept.push(r);
        }
        kept.extend(new_rays);
        rays = merge_close_rays(kept);
        if rays.is_empty() {
            break;
        }
    }
    Ok(rays)
}
