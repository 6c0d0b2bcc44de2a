//! Discrete maximal surfaces (`p = 2`) spanning a closed boundary curve.
//!
//! The mesh is a square grid whose boundary ring is pinned. Interior vertices
//! follow the mean curvature flow `x ← normalize(x + τH)`, where `H` comes from
//! a local polynomial graph fit in the adapted frame at each vertex.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvature::{curvature_from_ii, ii_bound};
use crate::immersion::{FundamentalData, ImmersionChart};
use crate::pseudo_linalg::{fix_sign, AmbientVector};
use crate::spaceform::{BoundaryRay, Lcg, Polyhedron, Quadric, QuadricPoint, RaySet, SpaceformError};

/// Smallest flow step before the solver gives up.
pub const STEP_FLOOR: f64 = 1e-12;
/// Allowed `|Q(x)+1|` after each accepted step.
pub const QUADRIC_DRIFT: f64 = 1e-10;
/// Slack on `Scal ≤ 0` for converged solutions.
pub const SCAL_SLACK: f64 = 1e-2;
/// Slack on `‖II‖² ≤ p·min(p-1, q)` for converged solutions.
pub const II_SLACK: f64 = 5e-2;
/// Ratio of smallest to largest singular value below which a fit is rejected.
pub const FIT_RANK_TOL: f64 = 1e-10;

const REFINE_ITERS: usize = 4;
const GROWTH: f64 = 1.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlateauError {
    #[error(transparent)]
    Spaceform(#[from] SpaceformError),
    #[error("the solver handles p = 2 only, got p = {0}")]
    Unsupported(usize),
    #[error("an ideal boundary is a cyclic quadrilateral of 4 rays, got {0}")]
    NotQuadrilateral(usize),
    #[error("a boundary loop needs 4(n-1) points with n >= 3, got {0}")]
    BadLoop(usize),
    #[error("boundary rays {0} and {1} are antipodal")]
    Antipodal(usize, usize),
    #[error("boundary is not spacelike-spannable: {0}")]
    NotSpannable(String),
    #[error("rank-deficient neighbourhood fit at vertex {0}")]
    RankDeficient(usize),
    #[error("edge ({0}, {1}) is not spacelike: Q(x,y) = {2}")]
    TimelikeEdge(usize, usize, f64),
    #[error("flow step collapsed below {STEP_FLOOR:e} at iteration {iteration} (residual {residual:e})")]
    StepCollapse { iteration: usize, residual: f64 },
    #[error("no convergence after {iterations} iterations, residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64, history: Vec<f64> },
    #[error("bound violated at vertex {vertex}: Scal = {scal}, |II|^2 = {ii_norm_sq}")]
    BoundViolated { vertex: usize, scal: f64, ii_norm_sq: f64 },
    #[error("invalid solver config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Initial (and largest) flow step `τ`.
    pub step: f64,
    /// Stop once the largest interior `‖H‖` is below this.
    pub tol_h: f64,
    pub max_iters: usize,
    /// Distance from the centre at which ideal boundaries are cut off.
    pub truncation_radius: f64,
    /// Neighbourhood depth (in grid rings) used by the local fit.
    pub fit_ring: usize,
    /// Vertices per side of the grid.
    pub resolution: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { step: 0.05, tol_h: 1e-3, max_iters: 5000, truncation_radius: 3.0, fit_ring: 2, resolution: 31 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), PlateauError> {
        if !(self.step > 0.0) {
            return Err(PlateauError::BadConfig("step must be positive"));
        }
        if !(self.tol_h > 0.0) {
            return Err(PlateauError::BadConfig("tol_h must be positive"));
        }
        if !(self.truncation_radius > 0.0) {
            return Err(PlateauError::BadConfig("truncation radius must be positive"));
        }
        if self.fit_ring == 0 {
            return Err(PlateauError::BadConfig("fit_ring must be at least 1"));
        }
        if self.resolution < 3 {
            return Err(PlateauError::BadConfig("resolution must be at least 3"));
        }
        Ok(())
    }
}

/// Boundary data for a solve.
#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    /// Four rays in cyclic order; the ideal boundary is the quadrilateral
    /// whose sides are the segments between consecutive rays.
    Ideal { p: usize, q: usize, rays: Vec<BoundaryRay> },
    /// A closed loop on the quadric with `4(n-1)` points, walked once.
    Loop { p: usize, q: usize, points: Vec<QuadricPoint> },
}

impl Boundary {
    /// The polyhedron `P` for `p = 2`, ordered `v_1, v_2, v_-1, v_-2`.
    pub fn polyhedron(poly: &Polyhedron) -> Result<Self, PlateauError> {
        if poly.p() != 2 {
            return Err(PlateauError::Unsupported(poly.p()));
        }
        let rays = [1, 2, -1, -2].iter().map(|&i| poly.vertex(i).clone()).collect();
        Ok(Boundary::Ideal { p: 2, q: poly.q(), rays })
    }

    pub fn from_ray_set(set: &RaySet) -> Result<Self, PlateauError> {
        Ok(Boundary::Ideal { p: set.p, q: set.q, rays: set.rays()? })
    }

    pub fn p(&self) -> usize {
        match self {
            Boundary::Ideal { p, .. } | Boundary::Loop { p, .. } => *p,
        }
    }

    pub fn q(&self) -> usize {
        match self {
            Boundary::Ideal { q, .. } | Boundary::Loop { q, .. } => *q,
        }
    }

    /// Moves every ray of an ideal boundary by a relative amount inside the
    /// null cone. Draws are repeated until the quadrilateral is still spannable.
    pub fn jittered(&self, amount: f64, seed: u64) -> Result<Self, PlateauError> {
        let Boundary::Ideal { p, q, rays } = self else {
            return Err(PlateauError::NotSpannable("only ideal boundaries can be jittered".into()));
        };
        let quadric = Quadric::new(*p, *q)?;
        let mut rng = Lcg::new(seed);
        for _ in 0..1000 {
            let mut out = Vec::with_capacity(rays.len());
            for r in rays {
                let g = DVector::from_fn(quadric.dim(), |_, _| rng.normal());
                let scale = amount * r.rep().norm() / g.norm().max(f64::MIN_POSITIVE);
                let v = r.rep() + g * scale;
                out.push(quadric.ray(&null_projection(*p, &v))?);
            }
            if check_quadrilateral(&quadric, &out).is_ok() {
                return Ok(Boundary::Ideal { p: *p, q: *q, rays: out });
            }
        }
        Err(PlateauError::NotSpannable("no admissible jitter found".into()))
    }
}

/// Rescales the spacelike and timelike blocks to a common length, keeping
/// null vectors fixed.
fn null_projection(p: usize, v: &AmbientVector) -> AmbientVector {
    let s = v.rows(0, p).norm();
    let t = v.rows(p, v.len() - p).norm();
    let m = (s * t).sqrt();
    let mut out = v.clone();
    out.rows_mut(0, p).scale_mut(m / s);
    let n = v.len() - p;
    out.rows_mut(p, n).scale_mut(m / t);
    out
}

fn check_quadrilateral(quadric: &Quadric, rays: &[BoundaryRay]) -> Result<(), PlateauError> {
    if rays.len() != 4 {
        return Err(PlateauError::NotQuadrilateral(rays.len()));
    }
    for i in 0..4 {
        for j in (i + 1)..4 {
            if rays[i].antipodal(&rays[j], 1e-9) {
                return Err(PlateauError::Antipodal(i, j));
            }
            if rays[i].same_ray(&rays[j], 1e-9) {
                return Err(PlateauError::NotSpannable(format!("rays {i} and {j} coincide")));
            }
        }
    }
    for k in 0..4 {
        let next = quadric.dot(rays[k].rep(), rays[(k + 1) % 4].rep());
        if next > 1e-12 {
            return Err(PlateauError::NotSpannable(format!("rays {k} and {} pair positively", (k + 1) % 4)));
        }
    }
    for k in 0..2 {
        let opp = quadric.dot(rays[k].rep(), rays[k + 2].rep());
        if !(opp < -1e-9) {
            return Err(PlateauError::NotSpannable(format!("opposite rays {k} and {} are not separated", k + 2)));
        }
    }
    Ok(())
}

/// Representatives scaled so that opposite rays pair to `-1/4`.
fn scaled_corners(quadric: &Quadric, rays: &[BoundaryRay]) -> Vec<AmbientVector> {
    let mut out: Vec<AmbientVector> = rays.iter().map(|r| r.rep().clone()).collect();
    for k in 0..2 {
        let c = (-0.25 / quadric.dot(&out[k], &out[k + 2])).sqrt();
        out[k] *= c;
        out[k + 2] *= c;
    }
    out
}

/// Boundary loop for an ideal quadrilateral at truncation radius `r`.
///
/// A ray `ℓ` on a side is paired with the dual combination `ℓ*` of the
/// opposite corners and cut off at `λℓ + ℓ*/λ`, `λ = 2e^r`. Grid corners sit
/// at side midpoints; grid sides pass through the quadrilateral's corners.
fn truncated_loop(quadric: &Quadric, rays: &[BoundaryRay], n: usize, r: f64) -> Result<Vec<AmbientVector>, PlateauError> {
    check_quadrilateral(quadric, rays)?;
    let a = scaled_corners(quadric, rays);
    let lambda = 2.0 * r.exp();
    let mut out = Vec::with_capacity(4 * (n - 1));
    for k in 0..4 {
        let b = &a[k];
        let prev = &a[(k + 3) % 4];
        let next = &a[(k + 1) % 4];
        let opp = &a[(k + 2) % 4];
        for m in 0..(n - 1) {
            let sigma = -1.0 + 2.0 * m as f64 / (n - 1) as f64;
            let (side, dual) = if sigma <= 0.0 { (prev, next) } else { (next, prev) };
            let w = (sigma.abs() * r).exp() / lambda;
            let ell = side * w + b * (1.0 - w);
            let star = dual / w + opp / (1.0 - w);
            let v = ell * lambda + star / lambda;
            let x = quadric.normalize(&v).map_err(|_| PlateauError::NotSpannable("truncated point is not timelike".into()))?;
            out.push(x.0);
        }
    }
    Ok(out)
}

/// Normalized sum of the corner representatives (ideal) or loop points.
fn boundary_centre(quadric: &Quadric, boundary: &Boundary) -> Result<AmbientVector, PlateauError> {
    let sum = match boundary {
        Boundary::Ideal { rays, .. } => scaled_corners(quadric, rays).iter().fold(DVector::zeros(quadric.dim()), |s, v| s + v),
        Boundary::Loop { points, .. } => points.iter().fold(DVector::zeros(quadric.dim()), |s, v| s + &v.0),
    };
    Ok(quadric.normalize(&sum).map_err(|_| PlateauError::NotSpannable("boundary has no timelike centre".into()))?.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct Mesh {
    pub p: usize,
    pub q: usize,
    pub vertices: Vec<QuadricPoint>,
    pub adjacency: Vec<Vec<usize>>,
    pub boundary_mask: Vec<bool>,
    pub param_hint: Vec<[f64; 2]>,
}

impl Mesh {
    /// `n × n` grid with 8-neighbour adjacency; the outer ring is the boundary.
    /// Vertex `(i, j)` has index `j·n + i` and hint `(i, j)/(n-1)`.
    pub fn grid(p: usize, q: usize, n: usize, positions: Vec<AmbientVector>) -> Self {
        assert_eq!(positions.len(), n * n);
        let idx = |i: usize, j: usize| j * n + i;
        let mut adjacency = vec![Vec::new(); n * n];
        let mut boundary_mask = vec![false; n * n];
        let mut param_hint = vec![[0.0; 2]; n * n];
        for j in 0..n {
            for i in 0..n {
                let v = idx(i, j);
                boundary_mask[v] = i == 0 || j == 0 || i == n - 1 || j == n - 1;
                param_hint[v] = [i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64];
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (ii, jj) = (i as i64 + di, j as i64 + dj);
                        if (di, dj) != (0, 0) && (0..n as i64).contains(&ii) && (0..n as i64).contains(&jj) {
                            adjacency[v].push(idx(ii as usize, jj as usize));
                        }
                    }
                }
            }
        }
        let vertices = positions.into_iter().map(QuadricPoint).collect();
        Self { p, q, vertices, adjacency, boundary_mask, param_hint }
    }

    /// Samples a 2-parameter chart on an `n × n` grid of coordinate spacing
    /// `spacing` centred at `centre`.
    pub fn sample_chart(chart: &ImmersionChart, centre: &[f64], spacing: f64, n: usize) -> Result<Self, PlateauError> {
        if chart.p() != 2 {
            return Err(PlateauError::Unsupported(chart.p()));
        }
        let half = (n - 1) as f64 / 2.0;
        let mut positions = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let u = [centre[0] + (i as f64 - half) * spacing, centre[1] + (j as f64 - half) * spacing];
                let x = chart.position(&u).map_err(|e| PlateauError::NotSpannable(e.to_string()))?;
                positions.push(x);
            }
        }
        Ok(Self::grid(2, chart.q(), n, positions))
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn interior(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| !self.boundary_mask[v]).collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(a, nb)| nb.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
    }

    /// Vertices within graph distance `depth` of `v`, excluding `v`, in BFS order.
    pub fn ring(&self, v: usize, depth: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        dist[v] = 0;
        let mut queue = VecDeque::from([v]);
        let mut out = Vec::new();
        while let Some(a) = queue.pop_front() {
            if dist[a] == depth {
                continue;
            }
            for &b in &self.adjacency[a] {
                if dist[b] == usize::MAX {
                    dist[b] = dist[a] + 1;
                    out.push(b);
                    queue.push_back(b);
                }
            }
        }
        out
    }

    /// Graph distance from every vertex to the boundary.
    pub fn boundary_depth(&self) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::new();
        for v in 0..self.len() {
            if self.boundary_mask[v] {
                dist[v] = 0;
                queue.push_back(v);
            }
        }
        while let Some(a) = queue.pop_front() {
            for &b in &self.adjacency[a] {
                if dist[b] == usize::MAX {
                    dist[b] = dist[a] + 1;
                    queue.push_back(b);
                }
            }
        }
        dist
    }

    /// Largest `|Q(x)+1|` over all vertices.
    pub fn quadric_drift(&self, quadric: &Quadric) -> f64 {
        self.vertices.iter().map(|x| (quadric.dot(&x.0, &x.0) + 1.0).abs()).fold(0.0, f64::max)
    }

    /// First edge whose chord is not spacelike, if any.
    pub fn timelike_edge(&self, quadric: &Quadric) -> Option<(usize, usize, f64)> {
        self.edges().find_map(|(a, b)| {
            let c = quadric.dot(&self.vertices[a].0, &self.vertices[b].0);
            (!(c < -1.0)).then_some((a, b, c))
        })
    }

    pub fn check(&self, quadric: &Quadric) -> Result<(), PlateauError> {
        let drift = self.quadric_drift(quadric);
        if drift > 1e-8 {
            return Err(SpaceformError::OffQuadric(drift).into());
        }
        if let Some(v) = self.interior().into_iter().find(|&v| self.adjacency[v].len() < 3) {
            return Err(PlateauError::NotSpannable(format!("interior vertex {v} has fewer than 3 neighbours")));
        }
        if let Some((a, b, c)) = self.timelike_edge(quadric) {
            return Err(PlateauError::TimelikeEdge(a, b, c));
        }
        Ok(())
    }
}

/// Grid positions of the boundary loop, walked bottom, right, top, left.
fn loop_indices(n: usize) -> Vec<usize> {
    let idx = |i: usize, j: usize| j * n + i;
    let mut out = Vec::with_capacity(4 * (n - 1));
    out.extend((0..n - 1).map(|i| idx(i, 0)));
    out.extend((0..n - 1).map(|j| idx(n - 1, j)));
    out.extend((1..n).rev().map(|i| idx(i, n - 1)));
    out.extend((1..n).rev().map(|j| idx(0, j)));
    out
}

/// Boundary loop of a solve as ambient points, with the grid size it implies.
fn boundary_loop(quadric: &Quadric, boundary: &Boundary, config: &SolverConfig) -> Result<(Vec<AmbientVector>, usize), PlateauError> {
    match boundary {
        Boundary::Ideal { rays, .. } => {
            let n = config.resolution;
            Ok((truncated_loop(quadric, rays, n, config.truncation_radius)?, n))
        }
        Boundary::Loop { points, .. } => {
            let m = points.len();
            if m < 8 || m % 4 != 0 {
                return Err(PlateauError::BadLoop(m));
            }
            for x in points {
                quadric.point(x.0.clone())?;
            }
            Ok((points.iter().map(|x| x.0.clone()).collect(), m / 4 + 1))
        }
    }
}

/// Builds the initial disk mesh: boundary loop on the outer ring, interior
/// from a blend of the four sides, then relaxed towards a discrete harmonic
/// map by Gauss-Seidel neighbour averaging on the quadric.
pub fn seed_mesh(boundary: &Boundary, config: &SolverConfig) -> Result<Mesh, PlateauError> {
    config.validate()?;
    let (p, q) = (boundary.p(), boundary.q());
    if p != 2 {
        return Err(PlateauError::Unsupported(p));
    }
    let quadric = Quadric::new(p, q)?;
    let (ring, n) = boundary_loop(&quadric, boundary, config)?;
    let idx = |i: usize, j: usize| j * n + i;
    let mut pos = vec![DVector::zeros(quadric.dim()); n * n];
    for (x, &v) in ring.into_iter().zip(loop_indices(n).iter()) {
        pos[v] = x;
    }
    let not_spannable = |_| PlateauError::NotSpannable("seed point is not timelike".into());
    let last = (n - 1) as f64;
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let (s, t) = (i as f64 / last, j as f64 / last);
            let v = &pos[idx(0, j)] * (1.0 - s) + &pos[idx(n - 1, j)] * s + &pos[idx(i, 0)] * (1.0 - t) + &pos[idx(i, n - 1)] * t;
            pos[idx(i, j)] = quadric.normalize(&v).map_err(not_spannable)?.0;
        }
    }
    // Gauss-Seidel on the normalized neighbour average
    for _ in 0..2 * n * n {
        let mut moved: f64 = 0.0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let sum = &pos[idx(i - 1, j)] + &pos[idx(i + 1, j)] + &pos[idx(i, j - 1)] + &pos[idx(i, j + 1)];
                let next = quadric.normalize(&sum).map_err(not_spannable)?.0;
                moved = moved.max((&next - &pos[idx(i, j)]).amax());
                pos[idx(i, j)] = next;
            }
        }
        if moved < 1e-10 {
            break;
        }
    }
    let mesh = Mesh::grid(p, q, n, pos);
    mesh.check(&quadric)?;
    Ok(mesh)
}

/// Polynomial graph fit at one vertex.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub data: FundamentalData,
    /// Polynomial degree actually used.
    pub degree: usize,
    /// Number of neighbours in the fit.
    pub support: usize,
}

impl LocalFit {
    pub fn mean_curvature(&self) -> &AmbientVector {
        &self.data.mean_curvature
    }

    pub fn mean_curvature_norm(&self) -> f64 {
        self.data.mean_curvature_norm_sq().sqrt()
    }
}

/// `log_x(y)` on the quadric for spacelike-separated `x, y`.
fn log_map(quadric: &Quadric, x: &AmbientVector, y: &AmbientVector) -> AmbientVector {
    let c = -quadric.dot(x, y);
    let w = y - x * c;
    if c <= 1.0 {
        return w;
    }
    let r = c.acosh();
    w * (r / r.sinh())
}

/// Exponent tuples of all monomials of degree `1..=d` in `p` variables.
fn monomials(p: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(p: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for e in (0..=left).rev() {
            cur.push(e);
            rec(p, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for deg in 1..=d {
        rec(p, deg, &mut Vec::new(), &mut out);
    }
    out
}

/// Gram–Schmidt in `Q` keeping the input order; each output has its first
/// significant coordinate positive.
fn orthonormal_tangents(quadric: &Quadric, vs: &[AmbientVector]) -> Option<Vec<AmbientVector>> {
    let mut out: Vec<AmbientVector> = Vec::with_capacity(vs.len());
    for v in vs {
        let mut w = v.clone();
        for e in &out {
            w.axpy(-quadric.dot(&w, e), e, 1.0);
        }
        let n = quadric.dot(&w, &w);
        if !(n > 1e-300) {
            return None;
        }
        w /= n.sqrt();
        fix_sign(&mut w);
        out.push(w);
    }
    Some(out)
}

fn normal_frame(quadric: &Quadric, x: &AmbientVector, tangents: &[AmbientVector], q: usize) -> Option<Vec<AmbientVector>> {
    let n = quadric.dim();
    let candidates: Vec<AmbientVector> = (0..n)
        .map(|k| {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            let mut w = &e + x * quadric.dot(&e, x);
            for t in tangents {
                w.axpy(-quadric.dot(&e, t), t, 1.0);
            }
            w
        })
        .collect();
    quadric.space().pseudo_orthonormalize(&candidates, 0, q).ok()
}

/// Initial tangent guess: top right-singular vectors of the log vectors.
fn principal_directions(logs: &[AmbientVector], p: usize) -> Option<Vec<AmbientVector>> {
    let dim = logs[0].len();
    let m = DMatrix::from_fn(logs.len(), dim, |r, c| logs[r][c]);
    let svd = m.svd(false, true);
    let vt = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Some(order.iter().take(p).map(|&k| vt.row(k).transpose()).collect())
}

/// Fits `z_α = Σ c·s^e` in the adapted frame at `x`, refining the tangent
/// plane until the linear coefficients vanish. `None` means rank-deficient.
fn fit_at(quadric: &Quadric, x: &AmbientVector, nbrs: &[&AmbientVector], max_degree: usize) -> Option<LocalFit> {
    let p = quadric.p();
    let q = quadric.q();
    let logs: Vec<AmbientVector> = nbrs.iter().map(|y| log_map(quadric, x, y)).collect();
    let m = logs.len();
    let degree = (2..=max_degree.max(2)).rev().find(|&d| m >= monomials(p, d).len() + d + 1)?;
    let monos = monomials(p, degree);
    let mut tangents = orthonormal_tangents(quadric, &principal_directions(&logs, p)?)?;
    let mut normals = normal_frame(quadric, x, &tangents, q)?;
    let mut hessian = vec![DMatrix::zeros(p, p); q];
    for iter in 0..REFINE_ITERS {
        let s: Vec<Vec<f64>> = logs.iter().map(|l| tangents.iter().map(|e| quadric.dot(l, e)).collect()).collect();
        let scale = (s.iter().map(|si| si.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / m as f64).sqrt();
        let mut a = DMatrix::zeros(m, monos.len());
        let mut z = DMatrix::zeros(m, q);
        for k in 0..m {
            let t: Vec<f64> = s[k].iter().map(|v| v / scale).collect();
            let w = 1.0 / (1.0 + t.iter().map(|v| v * v).sum::<f64>()).sqrt();
            for (c, e) in monos.iter().enumerate() {
                a[(k, c)] = w * t.iter().zip(e).map(|(tv, &ex)| tv.powi(ex as i32)).product::<f64>();
            }
            for (al, nrm) in normals.iter().enumerate() {
                z[(k, al)] = -w * quadric.dot(&logs[k], nrm);
            }
        }
        // normal equations on the rescaled monomials; pivots of the Cholesky
        // factor are the singular values' proxy for the rank test
        let chol = (a.transpose() * &a).cholesky()?;
        let diag = chol.l_dirty().diagonal();
        if !(diag.min() > FIT_RANK_TOL.sqrt() * diag.max()) {
            return None;
        }
        let coef = chol.solve(&(a.transpose() * &z));
        let mut slope = DMatrix::zeros(q, p);
        for (c, e) in monos.iter().enumerate() {
            let deg: usize = e.iter().sum();
            if deg == 1 {
                let i = e.iter().position(|&v| v == 1).unwrap();
                for al in 0..q {
                    slope[(al, i)] = coef[(c, al)] / scale;
                }
            } else if deg == 2 {
                let idx: Vec<usize> = (0..p).flat_map(|i| std::iter::repeat(i).take(e[i])).collect();
                let factor = if idx[0] == idx[1] { 2.0 } else { 1.0 };
                for al in 0..q {
                    let v = factor * coef[(c, al)] / (scale * scale);
                    hessian[al][(idx[0], idx[1])] = v;
                    hessian[al][(idx[1], idx[0])] = v;
                }
            }
        }
        if slope.amax() < 1e-10 || iter + 1 == REFINE_ITERS {
            break;
        }
        let tilted: Vec<AmbientVector> = (0..p)
            .map(|i| {
                let mut v = tangents[i].clone();
                for (al, nrm) in normals.iter().enumerate() {
                    v.axpy(slope[(al, i)], nrm, 1.0);
                }
                v
            })
            .collect();
        tangents = orthonormal_tangents(quadric, &tilted)?;
        normals = normal_frame(quadric, x, &tangents, q)?;
    }
    let mut mean_curvature = DVector::zeros(quadric.dim());
    for (al, nrm) in normals.iter().enumerate() {
        mean_curvature.axpy(hessian[al].trace(), nrm, 1.0);
    }
    let mut frame = tangents;
    frame.extend(normals);
    let data = FundamentalData {
        p,
        q,
        position: x.clone(),
        frame,
        coord_to_frame: DMatrix::identity(p, p),
        metric: DMatrix::identity(p, p),
        h: hessian,
        mean_curvature,
    };
    Some(LocalFit { data, degree, support: m })
}

/// Mean curvature and second fundamental form at vertex `v` from a graph fit
/// over its `ring`-neighbourhood.
pub fn estimate_h(mesh: &Mesh, v: usize, ring: usize) -> Result<LocalFit, PlateauError> {
    let quadric = Quadric::new(mesh.p, mesh.q)?;
    let nbrs = mesh.ring(v, ring);
    fit_with(&quadric, mesh, v, &nbrs, ring)
}

fn fit_with(quadric: &Quadric, mesh: &Mesh, v: usize, nbrs: &[usize], ring: usize) -> Result<LocalFit, PlateauError> {
    let pts: Vec<&AmbientVector> = nbrs.iter().map(|&b| &mesh.vertices[b].0).collect();
    if pts.is_empty() {
        return Err(PlateauError::RankDeficient(v));
    }
    // a k-ring supports degree 2k; interior stencils of degree <= 3 are monotone
    fit_at(quadric, &mesh.vertices[v].0, &pts, 2 * ring).ok_or(PlateauError::RankDeficient(v))
}

/// A mesh with its interior fits, as carried between flow steps.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub mesh: Mesh,
    /// Fit per vertex; `None` on the boundary.
    pub fits: Vec<Option<LocalFit>>,
    /// Largest interior `‖H‖`.
    pub residual: f64,
    /// Step to try next.
    pub step: f64,
}

impl FlowState {
    pub fn new(mesh: Mesh, config: &SolverConfig) -> Result<Self, PlateauError> {
        let rings = fit_rings(&mesh, config.fit_ring);
        Self::with_rings(mesh, &rings, config.step)
    }

    fn with_rings(mesh: Mesh, rings: &[(usize, Vec<usize>)], step: f64) -> Result<Self, PlateauError> {
        let fits = all_fits(&mesh, rings)?;
        let residual = max_residual(&fits);
        Ok(Self { mesh, fits, residual, step })
    }
}

/// Per-vertex fit neighbourhoods. The ring shrinks near the boundary so that
/// every stencil stays centred on its vertex.
fn fit_rings(mesh: &Mesh, depth: usize) -> Vec<(usize, Vec<usize>)> {
    let to_boundary = mesh.boundary_depth();
    (0..mesh.len())
        .map(|v| {
            let d = depth.min(to_boundary[v]);
            (d, if d == 0 { Vec::new() } else { mesh.ring(v, d) })
        })
        .collect()
}

fn all_fits(mesh: &Mesh, rings: &[(usize, Vec<usize>)]) -> Result<Vec<Option<LocalFit>>, PlateauError> {
    let quadric = Quadric::new(mesh.p, mesh.q)?;
    (0..mesh.len())
        .into_par_iter()
        .map(|v| if mesh.boundary_mask[v] { Ok(None) } else { fit_with(&quadric, mesh, v, &rings[v].1, rings[v].0).map(Some) })
        .collect()
}

fn max_residual(fits: &[Option<LocalFit>]) -> f64 {
    fits.iter().flatten().map(LocalFit::mean_curvature_norm).fold(0.0, f64::max)
}

/// Moves every interior vertex to `normalize(x + τH)`; boundary vertices are
/// copied unchanged.
pub fn advance(mesh: &Mesh, fits: &[Option<LocalFit>], step: f64) -> Result<Mesh, PlateauError> {
    let quadric = Quadric::new(mesh.p, mesh.q)?;
    let vertices = mesh
        .vertices
        .par_iter()
        .zip(fits.par_iter())
        .map(|(x, fit)| match fit {
            None => Ok(x.clone()),
            Some(f) => quadric.normalize(&(&x.0 + f.mean_curvature() * step)).map_err(PlateauError::from),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Mesh { vertices, ..mesh.clone() })
}

/// One accepted flow step with backtracking: the step is halved while the
/// residual would grow or an edge would stop being spacelike.
pub fn flow_step(state: &FlowState, config: &SolverConfig, iteration: usize) -> Result<FlowState, PlateauError> {
    let rings = fit_rings(&state.mesh, config.fit_ring);
    flow_step_with(state, config, &rings, iteration)
}

fn flow_step_with(state: &FlowState, config: &SolverConfig, rings: &[(usize, Vec<usize>)], iteration: usize) -> Result<FlowState, PlateauError> {
    let quadric = Quadric::new(state.mesh.p, state.mesh.q)?;
    let mut step = state.step;
    loop {
        if step < STEP_FLOOR {
            return Err(PlateauError::StepCollapse { iteration, residual: state.residual });
        }
        let trial = advance(&state.mesh, &state.fits, step)?;
        if trial.timelike_edge(&quadric).is_none() && trial.quadric_drift(&quadric) < QUADRIC_DRIFT {
            if let Ok(next) = FlowState::with_rings(trial, rings, step) {
                if next.residual <= state.residual {
                    return Ok(FlowState { step: (step * GROWTH).min(config.step), ..next });
                }
            }
        }
        step *= 0.5;
    }
}

/// Curvature extremes over a set of vertices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureSummary {
    pub count: usize,
    pub min_scal: f64,
    pub max_scal: f64,
    pub min_ii_norm_sq: f64,
    pub max_ii_norm_sq: f64,
    pub max_ric: f64,
    pub max_h: f64,
}

impl CurvatureSummary {
    fn of<'a>(rows: impl Iterator<Item = &'a VertexReport>) -> Self {
        let mut s = Self {
            count: 0,
            min_scal: f64::INFINITY,
            max_scal: f64::NEG_INFINITY,
            min_ii_norm_sq: f64::INFINITY,
            max_ii_norm_sq: f64::NEG_INFINITY,
            max_ric: f64::NEG_INFINITY,
            max_h: 0.0,
        };
        for r in rows {
            s.count += 1;
            s.min_scal = s.min_scal.min(r.scal);
            s.max_scal = s.max_scal.max(r.scal);
            s.min_ii_norm_sq = s.min_ii_norm_sq.min(r.ii_norm_sq);
            s.max_ii_norm_sq = s.max_ii_norm_sq.max(r.ii_norm_sq);
            s.max_ric = s.max_ric.max(r.ric_max);
            s.max_h = s.max_h.max(r.h_norm);
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VertexReport {
    pub vertex: usize,
    pub param_hint: [f64; 2],
    /// Distance to the mesh centre.
    pub radius: f64,
    /// At least `fit_ring` rings away from the boundary.
    pub full_support: bool,
    pub h_norm: f64,
    pub scal: f64,
    pub ii_norm_sq: f64,
    pub ric_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub mesh: Mesh,
    pub centre: AmbientVector,
    pub residual_h: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub vertices: Vec<VertexReport>,
    /// Interior vertices with full fit support.
    pub summary: CurvatureSummary,
    /// Vertices within half the truncation radius of the centre.
    pub core: CurvatureSummary,
    #[serde(skip)]
    pub estimates: Vec<Option<FundamentalData>>,
}

impl SolveResult {
    /// Summary over interior vertices within `radius` of the centre.
    pub fn summary_within(&self, radius: f64) -> CurvatureSummary {
        CurvatureSummary::of(self.vertices.iter().filter(|r| r.radius < radius))
    }

    /// Per-vertex CSV: hint, Scal, `‖II‖²`, largest Ricci eigenvalue.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["vertex", "s", "t", "radius", "full_support", "h_norm", "scal", "ii_norm_sq", "ric_max"])?;
        for r in &self.vertices {
            w.write_record(&[
                r.vertex.to_string(),
                r.param_hint[0].to_string(),
                r.param_hint[1].to_string(),
                r.radius.to_string(),
                r.full_support.to_string(),
                r.h_norm.to_string(),
                r.scal.to_string(),
                r.ii_norm_sq.to_string(),
                r.ric_max.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the flow from `mesh` until the residual drops below `tol_h`.
pub fn relax(mesh: Mesh, centre: AmbientVector, config: &SolverConfig) -> Result<SolveResult, PlateauError> {
    config.validate()?;
    let quadric = Quadric::new(mesh.p, mesh.q)?;
    mesh.check(&quadric)?;
    let rings = fit_rings(&mesh, config.fit_ring);
    let mut state = FlowState::with_rings(mesh, &rings, config.step)?;
    let mut history = vec![state.residual];
    let mut iterations = 0;
    while state.residual > config.tol_h {
        if iterations == config.max_iters {
            return Err(PlateauError::NotConverged { iterations, residual: state.residual, history });
        }
        iterations += 1;
        state = flow_step_with(&state, config, &rings, iterations)?;
        history.push(state.residual);
    }
    let result = report(state, centre, config, iterations, history)?;
    enforce_bounds(&result)?;
    Ok(result)
}

fn report(state: FlowState, centre: AmbientVector, config: &SolverConfig, iterations: usize, history: Vec<f64>) -> Result<SolveResult, PlateauError> {
    let quadric = Quadric::new(state.mesh.p, state.mesh.q)?;
    let depth = state.mesh.boundary_depth();
    let mut vertices = Vec::new();
    let mut estimates = Vec::with_capacity(state.fits.len());
    for (v, fit) in state.fits.into_iter().enumerate() {
        let Some(fit) = fit else {
            estimates.push(None);
            continue;
        };
        let curv = curvature_from_ii(&fit.data, -1.0);
        let radius = quadric.distance(&centre, &state.mesh.vertices[v].0).unwrap_or(f64::INFINITY);
        vertices.push(VertexReport {
            vertex: v,
            param_hint: state.mesh.param_hint[v],
            radius,
            full_support: depth[v] >= config.fit_ring,
            h_norm: fit.mean_curvature_norm(),
            scal: curv.scal,
            ii_norm_sq: fit.data.ii_norm_sq(),
            ric_max: curv.ric_max(),
        });
        estimates.push(Some(fit.data));
    }
    let summary = CurvatureSummary::of(vertices.iter().filter(|r| r.full_support));
    let core = CurvatureSummary::of(vertices.iter().filter(|r| r.radius < config.truncation_radius / 2.0));
    Ok(SolveResult { mesh: state.mesh, centre, residual_h: state.residual, iterations, history, vertices, summary, core, estimates })
}

fn enforce_bounds(result: &SolveResult) -> Result<(), PlateauError> {
    let bound = ii_bound(result.mesh.p, result.mesh.q) + II_SLACK;
    for r in result.vertices.iter().filter(|r| r.full_support) {
        if r.scal > SCAL_SLACK || r.ii_norm_sq > bound {
            return Err(PlateauError::BoundViolated { vertex: r.vertex, scal: r.scal, ii_norm_sq: r.ii_norm_sq });
        }
    }
    Ok(())
}

/// Seeds a mesh from `boundary` and relaxes it to a discrete maximal surface.
pub fn solve(boundary: &Boundary, config: &SolverConfig) -> Result<SolveResult, PlateauError> {
    let mesh = seed_mesh(boundary, config)?;
    let quadric = Quadric::new(mesh.p, mesh.q)?;
    let centre = boundary_centre(&quadric, boundary)?;
    relax(mesh, centre, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadiusRow {
    pub radius: f64,
    pub iterations: usize,
    pub residual_h: f64,
    pub vertices: usize,
    /// Summary over the common core (half the smallest radius).
    pub core: CurvatureSummary,
}

/// Solves the same boundary at several truncation radii and summarizes the
/// curvature on the core shared by all of them.
pub fn radius_study(boundary: &Boundary, config: &SolverConfig, radii: &[f64]) -> Result<Vec<RadiusRow>, PlateauError> {
    let core = radii.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
    radii
        .iter()
        .map(|&radius| {
            let cfg = SolverConfig { truncation_radius: radius, ..config.clone() };
            let res = solve(boundary, &cfg)?;
            Ok(RadiusRow { radius, iterations: res.iterations, residual_h: res.residual_h, vertices: res.mesh.len(), core: res.summary_within(core) })
        })
        .collect()
}

/// Largest change of core curvature between any two rows of a radius study.
pub fn radius_spread(rows: &[RadiusRow]) -> f64 {
    let spread = |f: fn(&CurvatureSummary) -> f64| {
        let vals: Vec<f64> = rows.iter().map(|r| f(&r.core)).collect();
        vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - vals.iter().copied().fold(f64::INFINITY, f64::min)
    };
    [spread(|c| c.min_scal), spread(|c| c.max_scal), spread(|c| c.max_ii_norm_sq), spread(|c| c.min_ii_norm_sq)]
        .into_iter()
        .fold(0.0, f64::max)
}
