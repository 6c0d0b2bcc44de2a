//! Parametric spacelike `p`-submanifolds of `H^{p,q}` and their fundamental data.
//!
//! A chart is a map from a box in `R^p` to the diagonal coordinates of
//! `R^{p,q+1}`, written over [`Jet`] so exact derivatives come for free.
//! Derived quantities that need a derivative of pointwise data (∇II,
//! Christoffel symbols, normal connection) use central differences of that
//! data along the parameter axes.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet::Jet;
use crate::pseudo_linalg::{AmbientVector, LinalgError};
use crate::spaceform::{Lcg, Quadric, SpaceformError};

/// Default central-difference step for jets of position-only charts.
pub const FD_JET_STEP: f64 = 1e-4;
/// Step for differencing pointwise data of charts with exact jets.
pub const OUTER_STEP_EXACT: f64 = 1e-4;
/// Step for differencing pointwise data of charts with differenced jets.
pub const OUTER_STEP_FD: f64 = 1e-3;
/// Smallest admissible eigenvalue of the induced metric.
pub const METRIC_MIN_EIG: f64 = 1e-8;
/// Largest admissible condition number of the induced metric.
pub const METRIC_MAX_COND: f64 = 1e8;
/// Positions must satisfy `|Q(x)+1|` below this.
pub const CHART_QUADRIC_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImmersionError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Spaceform(#[from] SpaceformError),
    #[error("parameter {u:?} outside the chart domain")]
    OutOfDomain { u: Vec<f64> },
    #[error("difference stencil of width {width:e} around {u:?} leaves the domain")]
    StencilExitsDomain { u: Vec<f64>, width: f64 },
    #[error("induced metric is degenerate or not spacelike (min eigenvalue {min_eig:e}, condition {cond:e})")]
    DegenerateMetric { min_eig: f64, cond: f64 },
    #[error("normal frame completion failed: {0}")]
    NormalCompletion(LinalgError),
    #[error("chart position is off the quadric: Q(x)+1 = {0:e}")]
    OffQuadric(f64),
    #[error("invalid chart: {0}")]
    BadChart(String),
}

/// The coordinate map of a chart.
pub trait ChartMap: Send + Sync + Debug {
    fn param_dim(&self) -> usize;
    fn codim(&self) -> usize;
    /// Diagonal coordinates of the image point, `p+q+1` entries.
    fn eval(&self, u: &[Jet]) -> Vec<Jet>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum JetMode {
    ClosedForm,
    FiniteDifference { h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    pub fn cube(p: usize, half: f64) -> Self {
        Self { lo: vec![-half; p], hi: vec![half; p] }
    }

    pub fn contains(&self, u: &[f64], margin: f64) -> bool {
        u.len() == self.lo.len()
            && u.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| *x >= l + margin && *x <= h - margin)
    }

    /// Seeded uniform sample with `margin` kept from the faces.
    pub fn sample(&self, rng: &mut Lcg, margin: f64) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| rng.uniform(l + margin, h - margin)).collect()
    }
}

/// Position and partial derivatives at one parameter point.
#[derive(Debug, Clone)]
pub struct PointJet {
    pub pos: AmbientVector,
    pub d1: Vec<AmbientVector>,
    pub d2: Vec<Vec<AmbientVector>>,
    pub d3: Vec<Vec<Vec<AmbientVector>>>,
}

impl PointJet {
    fn from_jets(coords: &[Jet], p: usize, order: u8) -> Self {
        let n = coords.len();
        let col = |f: &dyn Fn(&Jet) -> f64| DVector::from_iterator(n, coords.iter().map(f));
        let pos = col(&|j| j.value());
        let d1 = if order >= 1 { (0..p).map(|i| col(&|j| j.d1(i))).collect() } else { Vec::new() };
        let d2 = if order >= 2 {
            (0..p).map(|i| (0..p).map(|k| col(&|j| j.d2(i, k))).collect()).collect()
        } else {
            Vec::new()
        };
        let d3 = if order >= 3 {
            (0..p)
                .map(|i| (0..p).map(|k| (0..p).map(|l| col(&|j| j.d3(i, k, l))).collect()).collect())
                .collect()
        } else {
            Vec::new()
        };
        Self { pos, d1, d2, d3 }
    }

    /// Induced metric `g_ij = Q(∂_i x, ∂_j x)`.
    pub fn metric(&self, quadric: &Quadric) -> DMatrix<f64> {
        let p = self.d1.len();
        DMatrix::from_fn(p, p, |i, j| quadric.dot(&self.d1[i], &self.d1[j]))
    }
}

/// A spacelike patch: coordinate map, parameter box and jet mode.
#[derive(Debug, Clone)]
pub struct ImmersionChart {
    map: Arc<dyn ChartMap>,
    domain: ParamBox,
    mode: JetMode,
    quadric: Quadric,
}

impl ImmersionChart {
    pub fn new(map: Arc<dyn ChartMap>, domain: ParamBox, mode: JetMode) -> Result<Self, ImmersionError> {
        let p = map.param_dim();
        if domain.lo.len() != p || domain.hi.len() != p {
            return Err(ImmersionError::BadChart(format!("domain box must have {p} axes")));
        }
        if let JetMode::FiniteDifference { h } = mode {
            if !(h > 0.0) {
                return Err(ImmersionError::BadChart("difference step must be positive".into()));
            }
        }
        let quadric = Quadric::new(p, map.codim())?;
        Ok(Self { map, domain, mode, quadric })
    }

    pub fn with_mode(&self, mode: JetMode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn p(&self) -> usize {
        self.quadric.p()
    }

    pub fn q(&self) -> usize {
        self.quadric.q()
    }

    pub fn quadric(&self) -> &Quadric {
        &self.quadric
    }

    pub fn domain(&self) -> &ParamBox {
        &self.domain
    }

    pub fn jet_mode(&self) -> JetMode {
        self.mode
    }

    pub fn map(&self) -> &Arc<dyn ChartMap> {
        &self.map
    }

    /// Step used when differencing pointwise data of this chart.
    pub fn outer_step(&self) -> f64 {
        match self.mode {
            JetMode::ClosedForm => OUTER_STEP_EXACT,
            JetMode::FiniteDifference { .. } => OUTER_STEP_FD,
        }
    }

    fn raw_position(&self, u: &[f64]) -> AmbientVector {
        let coords = self.map.eval(&Jet::variables(u, 0));
        DVector::from_iterator(coords.len(), coords.iter().map(|j| j.value()))
    }

    /// Image point, rescaled onto the quadric.
    pub fn position(&self, u: &[f64]) -> Result<AmbientVector, ImmersionError> {
        let x = self.raw_position(u);
        let n = self.quadric.dot(&x, &x);
        if !(n < 0.0) {
            return Err(ImmersionError::OffQuadric(n + 1.0));
        }
        Ok(x / (-n).sqrt())
    }

    /// Jet of the requested order at `u`.
    pub fn jet(&self, u: &[f64], order: u8) -> Result<PointJet, ImmersionError> {
        if !self.domain.contains(u, 0.0) {
            return Err(ImmersionError::OutOfDomain { u: u.to_vec() });
        }
        let jet = match self.mode {
            JetMode::ClosedForm => PointJet::from_jets(&self.map.eval(&Jet::variables(u, order)), self.p(), order),
            JetMode::FiniteDifference { h } => self.fd_jet(u, order, h)?,
        };
        let r = self.quadric.dot(&jet.pos, &jet.pos) + 1.0;
        if r.abs() >= CHART_QUADRIC_TOL {
            return Err(ImmersionError::OffQuadric(r));
        }
        Ok(jet)
    }

    fn shifted(u: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
        let mut v = u.to_vec();
        for &(i, d) in moves {
            v[i] += d;
        }
        v
    }

    fn fd_jet(&self, u: &[f64], order: u8, h: f64) -> Result<PointJet, ImmersionError> {
        let p = self.p();
        let f = |moves: &[(usize, f64)]| self.position(&Self::shifted(u, moves));
        let pos = f(&[])?;
        let mut d1 = Vec::new();
        let mut d2 = Vec::new();
        let mut d3 = Vec::new();
        if order >= 1 {
            for i in 0..p {
                d1.push((f(&[(i, h)])? - f(&[(i, -h)])?) / (2.0 * h));
            }
        }
        if order >= 2 {
            d2 = self.fd_hessian(u, h)?;
        }
        if order >= 3 {
            let h3 = h.max(2e-3);
            let plus: Vec<_> = (0..p).map(|k| self.fd_hessian(&Self::shifted(u, &[(k, h3)]), h)).collect::<Result<_, _>>()?;
            let minus: Vec<_> = (0..p).map(|k| self.fd_hessian(&Self::shifted(u, &[(k, -h3)]), h)).collect::<Result<_, _>>()?;
            d3 = (0..p)
                .map(|i| {
                    (0..p)
                        .map(|j| (0..p).map(|k| (&plus[k][i][j] - &minus[k][i][j]) / (2.0 * h3)).collect())
                        .collect()
                })
                .collect();
        }
        Ok(PointJet { pos, d1, d2, d3 })
    }

    fn fd_hessian(&self, u: &[f64], h: f64) -> Result<Vec<Vec<AmbientVector>>, ImmersionError> {
        let p = self.p();
        let f = |moves: &[(usize, f64)]| self.position(&Self::shifted(u, moves));
        let c = f(&[])?;
        let mut out = vec![vec![DVector::zeros(c.len()); p]; p];
        for i in 0..p {
            out[i][i] = (f(&[(i, h)])? - &c * 2.0 + f(&[(i, -h)])?) / (h * h);
            for j in 0..i {
                let m = (f(&[(i, h), (j, h)])? - f(&[(i, h), (j, -h)])? - f(&[(i, -h), (j, h)])?
                    + f(&[(i, -h), (j, -h)])?)
                    / (4.0 * h * h);
                out[i][j] = m.clone();
                out[j][i] = m;
            }
        }
        Ok(out)
    }

    pub(crate) fn check_stencil(&self, u: &[f64], width: f64) -> Result<(), ImmersionError> {
        if !self.domain.contains(u, width) {
            return Err(ImmersionError::StencilExitsDomain { u: u.to_vec(), width });
        }
        Ok(())
    }
}

/// Adapted frame and second fundamental form at one point.
#[derive(Debug, Clone, Serialize)]
pub struct FundamentalData {
    pub p: usize,
    pub q: usize,
    pub position: AmbientVector,
    /// `p` tangent vectors then `q` normal vectors.
    pub frame: Vec<AmbientVector>,
    /// Column `a` holds the coordinates of the tangent frame vector `e_a` on `∂_1..∂_p`.
    pub coord_to_frame: DMatrix<f64>,
    /// Induced metric on the coordinate vectors.
    pub metric: DMatrix<f64>,
    /// `h[α][(i,j)] = -g_N(II(e_i,e_j), e_α)`; these are the shape operators `H^α`.
    pub h: Vec<DMatrix<f64>>,
    pub mean_curvature: AmbientVector,
}

impl FundamentalData {
    pub fn from_jet(quadric: &Quadric, jet: &PointJet) -> Result<Self, ImmersionError> {
        let p = quadric.p();
        let q = quadric.q();
        let space = quadric.space();
        let metric = jet.metric(quadric);
        check_metric(&metric)?;
        let tangent = space.pseudo_orthonormalize(&jet.d1, p, 0)?;
        let b = DMatrix::from_fn(p, p, |i, a| quadric.dot(&jet.d1[i], &tangent[a]));
        let ginv = metric.clone().try_inverse().ok_or(ImmersionError::DegenerateMetric { min_eig: 0.0, cond: f64::INFINITY })?;
        let coord_to_frame = &ginv * b;
        let x = &jet.pos;
        let n = quadric.dim();
        let project = |v: &AmbientVector| {
            let mut w = v + x * quadric.dot(v, x);
            for e in &tangent {
                w.axpy(-quadric.dot(v, e), e, 1.0);
            }
            w
        };
        let candidates: Vec<_> = (0..n)
            .map(|k| {
                let mut e = DVector::zeros(n);
                e[k] = 1.0;
                project(&e)
            })
            .collect();
        let normals = if q == 0 {
            Vec::new()
        } else {
            space.pseudo_orthonormalize(&candidates, 0, q).map_err(ImmersionError::NormalCompletion)?
        };
        let mut h = vec![DMatrix::zeros(p, p); q];
        for a in 0..p {
            for bb in a..p {
                let mut xab = DVector::zeros(n);
                for i in 0..p {
                    for j in 0..p {
                        xab.axpy(coord_to_frame[(i, a)] * coord_to_frame[(j, bb)], &jet.d2[i][j], 1.0);
                    }
                }
                for (al, e) in normals.iter().enumerate() {
                    let v = -quadric.dot(&xab, e);
                    h[al][(a, bb)] = v;
                    h[al][(bb, a)] = v;
                }
            }
        }
        let mut mean_curvature = DVector::zeros(n);
        for (al, e) in normals.iter().enumerate() {
            mean_curvature.axpy(h[al].trace(), e, 1.0);
        }
        let mut frame = tangent;
        frame.extend(normals);
        Ok(Self { p, q, position: x.clone(), frame, coord_to_frame, metric, h, mean_curvature })
    }

    pub fn tangent(&self, a: usize) -> &AmbientVector {
        &self.frame[a]
    }

    pub fn normal(&self, alpha: usize) -> &AmbientVector {
        &self.frame[self.p + alpha]
    }

    pub fn normals(&self) -> &[AmbientVector] {
        &self.frame[self.p..]
    }

    pub fn shape_ops(&self) -> &[DMatrix<f64>] {
        &self.h
    }

    /// `‖II‖² = Σ (h^α_ij)²`.
    pub fn ii_norm_sq(&self) -> f64 {
        self.h.iter().map(|m| m.norm_squared()).sum()
    }

    /// `‖H‖² = -Q(H,H) = Σ_α (tr H^α)²`.
    pub fn mean_curvature_norm_sq(&self) -> f64 {
        self.h.iter().map(|m| m.trace().powi(2)).sum()
    }

    /// `II(e_a, e_b)` as an ambient vector.
    pub fn ii(&self, a: usize, b: usize) -> AmbientVector {
        let mut v = DVector::zeros(self.position.len());
        for (al, m) in self.h.iter().enumerate() {
            v.axpy(m[(a, b)], self.normal(al), 1.0);
        }
        v
    }

    /// Same point in the frame `e'_a = Σ_b rt[(b,a)] e_b`, `e'_α = Σ_β rn[(β,α)] e_β`.
    /// Both matrices must be orthogonal.
    pub fn reframed(&self, rt: &DMatrix<f64>, rn: &DMatrix<f64>) -> Self {
        let (p, q) = (self.p, self.q);
        let mix = |vs: &[AmbientVector], r: &DMatrix<f64>, k: usize| {
            let mut v = DVector::zeros(self.position.len());
            for (b, e) in vs.iter().enumerate() {
                v.axpy(r[(b, k)], e, 1.0);
            }
            v
        };
        let mut frame: Vec<_> = (0..p).map(|a| mix(&self.frame[..p], rt, a)).collect();
        frame.extend((0..q).map(|al| mix(&self.frame[p..], rn, al)));
        let rotated: Vec<_> = self.h.iter().map(|m| rt.transpose() * m * rt).collect();
        let h = (0..q)
            .map(|al| {
                let mut m = DMatrix::zeros(p, p);
                for (b, r) in rotated.iter().enumerate() {
                    m += r * rn[(b, al)];
                }
                (&m + m.transpose()) * 0.5
            })
            .collect();
        Self {
            p,
            q,
            position: self.position.clone(),
            frame,
            coord_to_frame: &self.coord_to_frame * rt,
            metric: self.metric.clone(),
            h,
            mean_curvature: self.mean_curvature.clone(),
        }
    }
}

fn check_metric(g: &DMatrix<f64>) -> Result<(), ImmersionError> {
    let ev = g.clone().symmetric_eigen().eigenvalues;
    let min = ev.min();
    let max = ev.max();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(min > METRIC_MIN_EIG) || cond > METRIC_MAX_COND {
        return Err(ImmersionError::DegenerateMetric { min_eig: min, cond });
    }
    Ok(())
}

pub fn fundamental_data(chart: &ImmersionChart, u: &[f64]) -> Result<FundamentalData, ImmersionError> {
    FundamentalData::from_jet(chart.quadric(), &chart.jet(u, 2)?)
}

/// Normal projection at a point: `v ↦ v - P_T v + Q(v,x) x`, built from the
/// coordinate tangents so it is smooth in the parameter.
fn normal_projection(quadric: &Quadric, jet: &PointJet, ginv: &DMatrix<f64>, v: &AmbientVector) -> AmbientVector {
    let p = jet.d1.len();
    let x = &jet.pos;
    let mut w = v + x * quadric.dot(v, x);
    let c: Vec<f64> = jet.d1.iter().map(|t| quadric.dot(v, t)).collect();
    for i in 0..p {
        for j in 0..p {
            w.axpy(-ginv[(i, j)] * c[i], &jet.d1[j], 1.0);
        }
    }
    w
}

/// Metric, a normal frame that varies smoothly with the parameter (projection
/// of a reference frame followed by ordered Gram–Schmidt) and the coordinate
/// components of II in that frame.
struct CoordData {
    metric: DMatrix<f64>,
    normals: Vec<AmbientVector>,
    hc: Vec<DMatrix<f64>>,
    mean_curvature: AmbientVector,
}

fn coord_data(chart: &ImmersionChart, u: &[f64], reference: &[AmbientVector]) -> Result<CoordData, ImmersionError> {
    let quadric = chart.quadric();
    let p = chart.p();
    let jet = chart.jet(u, 2)?;
    let metric = jet.metric(quadric);
    check_metric(&metric)?;
    let ginv = metric.clone().try_inverse().expect("checked metric");
    let mut normals: Vec<AmbientVector> = Vec::with_capacity(reference.len());
    for r in reference {
        let mut w = normal_projection(quadric, &jet, &ginv, r);
        for e in &normals {
            let c = quadric.dot(&w, e);
            w.axpy(c, e, 1.0);
        }
        let n = -quadric.dot(&w, &w);
        if !(n > 0.0) {
            return Err(ImmersionError::NormalCompletion(LinalgError::Degenerate { pivot: n, sign: "timelike" }));
        }
        normals.push(w / n.sqrt());
    }
    let hc: Vec<DMatrix<f64>> = normals
        .iter()
        .map(|e| {
            let mut m = DMatrix::zeros(p, p);
            for i in 0..p {
                for j in i..p {
                    let v = -quadric.dot(&jet.d2[i][j], e);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            m
        })
        .collect();
    let mut mean_curvature = DVector::zeros(quadric.dim());
    for (m, e) in hc.iter().zip(&normals) {
        mean_curvature.axpy((&ginv * m).trace(), e, 1.0);
    }
    Ok(CoordData { metric, normals, hc, mean_curvature })
}

/// Components `(∇_{e_k} II)(e_i, e_j)` on the normal frame `e_α`.
#[derive(Debug, Clone, Serialize)]
pub struct CovariantDerivativeII {
    pub p: usize,
    pub q: usize,
    /// Indexed `[α][k][i][j]`, flattened.
    pub components: Vec<f64>,
    pub codazzi_residual: f64,
}

impl CovariantDerivativeII {
    pub fn get(&self, alpha: usize, k: usize, i: usize, j: usize) -> f64 {
        let p = self.p;
        self.components[((alpha * p + k) * p + i) * p + j]
    }

    pub fn norm_sq(&self) -> f64 {
        self.components.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// ∇II in the frame of [`fundamental_data`] at `u`.
pub fn covariant_derivative_ii(chart: &ImmersionChart, u: &[f64]) -> Result<CovariantDerivativeII, ImmersionError> {
    let fd = fundamental_data(chart, u)?;
    covariant_derivative_in_frame(chart, u, &fd)
}

/// ∇II by five-point differences of coordinate data:
/// `∂_k h^β_ij + Σ_α h^α_ij ω^β_{αk} − Γ^m_ki h^β_mj − Γ^m_kj h^β_im`,
/// with `ω^β_{αk} = −Q(∂_k e_α, e_β)` and Christoffel symbols from the
/// differenced metric, then rotated into the tangent frame of `fd`.
pub fn covariant_derivative_in_frame(
    chart: &ImmersionChart,
    u: &[f64],
    fd: &FundamentalData,
) -> Result<CovariantDerivativeII, ImmersionError> {
    let (p, q) = (chart.p(), chart.q());
    let h = chart.outer_step();
    chart.check_stencil(u, 3.0 * h)?;
    let quadric = chart.quadric();
    let reference = fd.normals().to_vec();
    let center = coord_data(chart, u, &reference)?;
    let mut dh = Vec::with_capacity(p);
    let mut de = Vec::with_capacity(p);
    let mut dg = Vec::with_capacity(p);
    for k in 0..p {
        // five-point first derivative
        let [m2, m1, p1, p2] = [-2.0, -1.0, 1.0, 2.0]
            .map(|s| coord_data(chart, &ImmersionChart::shifted(u, &[(k, s * h)]), &reference));
        let (m2, m1, p1, p2) = (m2?, m1?, p1?, p2?);
        let w = 12.0 * h;
        dh.push((0..q).map(|a| ((&p1.hc[a] - &m1.hc[a]) * 8.0 - (&p2.hc[a] - &m2.hc[a])) / w).collect::<Vec<_>>());
        de.push(
            (0..q).map(|a| ((&p1.normals[a] - &m1.normals[a]) * 8.0 - (&p2.normals[a] - &m2.normals[a])) / w).collect::<Vec<_>>(),
        );
        dg.push(((&p1.metric - &m1.metric) * 8.0 - (&p2.metric - &m2.metric)) / w);
    }
    let ginv = center.metric.clone().try_inverse().expect("checked metric");
    let gamma = christoffel(&ginv, &dg);
    // ω[k][(α, β)]
    let omega: Vec<DMatrix<f64>> = (0..p)
        .map(|k| DMatrix::from_fn(q, q, |a, b| -quadric.dot(&de[k][a], &center.normals[b])))
        .collect();
    let mut coord = vec![0.0; q * p * p * p];
    let idx = |b: usize, k: usize, i: usize, j: usize| ((b * p + k) * p + i) * p + j;
    for b in 0..q {
        for k in 0..p {
            for i in 0..p {
                for j in 0..p {
                    let mut v = dh[k][b][(i, j)];
                    for a in 0..q {
                        v += center.hc[a][(i, j)] * omega[k][(a, b)];
                    }
                    for m in 0..p {
                        v -= gamma[m][(k, i)] * center.hc[b][(m, j)] + gamma[m][(k, j)] * center.hc[b][(i, m)];
                    }
                    coord[idx(b, k, i, j)] = v;
                }
            }
        }
    }
    // the reference normals are the frame normals, so only the tangent slots rotate
    let e = &fd.coord_to_frame;
    let mut comps = vec![0.0; q * p * p * p];
    for b in 0..q {
        let mut step1 = vec![0.0; p * p * p];
        for c in 0..p {
            for i in 0..p {
                for j in 0..p {
                    step1[(c * p + i) * p + j] = (0..p).map(|k| e[(k, c)] * coord[idx(b, k, i, j)]).sum();
                }
            }
        }
        let mut step2 = vec![0.0; p * p * p];
        for c in 0..p {
            for a in 0..p {
                for j in 0..p {
                    step2[(c * p + a) * p + j] = (0..p).map(|i| e[(i, a)] * step1[(c * p + i) * p + j]).sum();
                }
            }
        }
        for c in 0..p {
            for a in 0..p {
                for d in 0..p {
                    comps[idx(b, c, a, d)] = (0..p).map(|j| e[(j, d)] * step2[(c * p + a) * p + j]).sum();
                }
            }
        }
    }
    let mut codazzi: f64 = 0.0;
    for b in 0..q {
        for k in 0..p {
            for i in 0..p {
                for j in 0..p {
                    codazzi = codazzi.max((comps[idx(b, k, i, j)] - comps[idx(b, i, k, j)]).abs());
                }
            }
        }
    }
    Ok(CovariantDerivativeII { p, q, components: comps, codazzi_residual: codazzi })
}

/// `Γ^m_ij` (returned as `gamma[m][(i,j)]`) from the inverse metric and the
/// metric derivatives `dg[k] = ∂_k g`.
pub fn christoffel(ginv: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let p = ginv.nrows();
    let lower = |i: usize, j: usize, l: usize| 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
    (0..p)
        .map(|m| DMatrix::from_fn(p, p, |i, j| (0..p).map(|l| ginv[(m, l)] * lower(i, j, l)).sum()))
        .collect()
}

/// `d∇* A(e_c) = −Σ_k (∇_{e_k} II)(e_k, e_c)`, one normal vector per tangent frame vector.
pub fn codifferential_a(chart: &ImmersionChart, u: &[f64]) -> Result<Vec<AmbientVector>, ImmersionError> {
    let fd = fundamental_data(chart, u)?;
    let nabla = covariant_derivative_in_frame(chart, u, &fd)?;
    let (p, q) = (fd.p, fd.q);
    Ok((0..p)
        .map(|c| {
            let mut v = DVector::zeros(fd.position.len());
            for a in 0..q {
                let s: f64 = (0..p).map(|k| nabla.get(a, k, k, c)).sum();
                v.axpy(-s, fd.normal(a), 1.0);
            }
            v
        })
        .collect())
}

/// `∇^N_{e_c} H` for each tangent frame vector, from differenced mean curvature vectors.
pub fn mean_curvature_gradient(chart: &ImmersionChart, u: &[f64]) -> Result<Vec<AmbientVector>, ImmersionError> {
    let fd = fundamental_data(chart, u)?;
    let p = fd.p;
    let h = chart.outer_step();
    chart.check_stencil(u, 2.0 * h)?;
    let reference = fd.normals().to_vec();
    let jet = chart.jet(u, 1)?;
    let ginv = jet.metric(chart.quadric()).try_inverse().expect("checked metric");
    let mut dk = Vec::with_capacity(p);
    for k in 0..p {
        let plus = coord_data(chart, &ImmersionChart::shifted(u, &[(k, h)]), &reference)?;
        let minus = coord_data(chart, &ImmersionChart::shifted(u, &[(k, -h)]), &reference)?;
        let d = (&plus.mean_curvature - &minus.mean_curvature) / (2.0 * h);
        dk.push(normal_projection(chart.quadric(), &jet, &ginv, &d));
    }
    Ok((0..p)
        .map(|c| {
            let mut v = DVector::zeros(fd.position.len());
            for (k, d) in dk.iter().enumerate() {
                v.axpy(fd.coord_to_frame[(k, c)], d, 1.0);
            }
            v
        })
        .collect())
}

/// `g_N(R^N_{e_a,e_b} e_α, e_β)`, indexed `[a][b][α][β]` flattened.
#[derive(Debug, Clone, Serialize)]
pub struct NormalCurvature {
    pub p: usize,
    pub q: usize,
    pub components: Vec<f64>,
}

impl NormalCurvature {
    pub fn get(&self, a: usize, b: usize, alpha: usize, beta: usize) -> f64 {
        self.components[((a * self.p + b) * self.q + alpha) * self.q + beta]
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Normal curvature from the shape operators via the Ricci equation,
/// `g_N(R^N_{X,Y}U,V) = g_T(B_U Y, B_V X) − g_T(B_U X, B_V Y)` with `B_{e_α} = −H^α`.
pub fn normal_curvature(fd: &FundamentalData) -> NormalCurvature {
    let (p, q) = (fd.p, fd.q);
    let mut components = vec![0.0; p * p * q * q];
    for a in 0..p {
        for b in 0..p {
            for al in 0..q {
                for be in 0..q {
                    let (ba, bb) = (&fd.h[al], &fd.h[be]);
                    let s: f64 = (0..p).map(|c| ba[(b, c)] * bb[(a, c)] - ba[(a, c)] * bb[(b, c)]).sum();
                    components[((a * p + b) * q + al) * q + be] = s;
                }
            }
        }
    }
    NormalCurvature { p, q, components }
}

/// Largest Frobenius norm of a commutator `[H^α, H^β]`.
pub fn max_commutator(fd: &FundamentalData) -> f64 {
    let mut m: f64 = 0.0;
    for a in 0..fd.q {
        for b in (a + 1)..fd.q {
            let c = &fd.h[a] * &fd.h[b] - &fd.h[b] * &fd.h[a];
            m = m.max(c.norm());
        }
    }
    m
}

/// One analytic height term of a [`GraphChart`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphTerm {
    /// `coeff · Π u_i^{powers_i}`
    Monomial { normal: usize, coeff: f64, powers: Vec<u32> },
    /// `coeff · sin(freq·u + phase)`
    Wave { normal: usize, coeff: f64, freq: Vec<f64>, phase: f64 },
}

/// Normal graph over the totally geodesic `H^p`:
/// `x(u) = √(1−|φ|²)·(u, √(1+|u|²)) + Σ_β φ_β(u) f_{β+2}`, defined while `|φ| < 1`.
/// No terms gives the totally geodesic chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphChart {
    pub p: usize,
    pub q: usize,
    pub terms: Vec<GraphTerm>,
}

impl GraphChart {
    pub fn totally_geodesic(p: usize, q: usize) -> Self {
        Self { p, q, terms: Vec::new() }
    }

    /// Seeded random heights: quadratic and cubic monomials plus one wave per
    /// normal direction, all scaled by `amplitude`.
    pub fn random(p: usize, q: usize, seed: u64, amplitude: f64) -> Self {
        let mut rng = Lcg::new(seed);
        let mut terms = Vec::new();
        for normal in 0..q {
            for i in 0..p {
                for j in i..p {
                    let mut powers = vec![0; p];
                    powers[i] += 1;
                    powers[j] += 1;
                    terms.push(GraphTerm::Monomial { normal, coeff: amplitude * rng.normal(), powers });
                    for k in j..p {
                        let mut cubic = vec![0; p];
                        cubic[i] += 1;
                        cubic[j] += 1;
                        cubic[k] += 1;
                        terms.push(GraphTerm::Monomial { normal, coeff: 0.5 * amplitude * rng.normal(), powers: cubic });
                    }
                }
            }
            let freq = (0..p).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            terms.push(GraphTerm::Wave { normal, coeff: 0.3 * amplitude * rng.normal(), freq, phase });
        }
        Self { p, q, terms }
    }

    pub fn validate(&self) -> Result<(), ImmersionError> {
        if self.p == 0 {
            return Err(ImmersionError::BadChart("graph chart needs p >= 1".into()));
        }
        for t in &self.terms {
            let (normal, len) = match t {
                GraphTerm::Monomial { normal, powers, .. } => (*normal, powers.len()),
                GraphTerm::Wave { normal, freq, .. } => (*normal, freq.len()),
            };
            if normal >= self.q || len != self.p {
                return Err(ImmersionError::BadChart(format!(
                    "graph term needs normal < {} and {} exponents/frequencies",
                    self.q, self.p
                )));
            }
        }
        Ok(())
    }

    pub fn chart(self, domain: ParamBox, mode: JetMode) -> Result<ImmersionChart, ImmersionError> {
        self.validate()?;
        ImmersionChart::new(Arc::new(self), domain, mode)
    }
}

impl ChartMap for GraphChart {
    fn param_dim(&self) -> usize {
        self.p
    }

    fn codim(&self) -> usize {
        self.q
    }

    fn eval(&self, u: &[Jet]) -> Vec<Jet> {
        let (p, q) = (self.p, self.q);
        let zero = u[0].lift(0.0);
        let mut heights = vec![zero.clone(); q];
        for t in &self.terms {
            match t {
                GraphTerm::Monomial { normal, coeff, powers } => {
                    let mut m = u[0].lift(*coeff);
                    for (x, &k) in u.iter().zip(powers) {
                        if k > 0 {
                            m = m * x.powi(k as i32);
                        }
                    }
                    heights[*normal] = &heights[*normal] + m;
                }
                GraphTerm::Wave { normal, coeff, freq, phase } => {
                    let mut arg = u[0].lift(*phase);
                    for (x, f) in u.iter().zip(freq) {
                        arg = arg + x * *f;
                    }
                    heights[*normal] = &heights[*normal] + arg.sin() * *coeff;
                }
            }
        }
        let mut r2 = zero.clone();
        for x in u {
            r2 = r2 + x * x;
        }
        let mut h2 = zero.clone();
        for h in &heights {
            h2 = h2 + h * h;
        }
        let s = (-h2 + 1.0).sqrt();
        let mut out: Vec<Jet> = u.iter().map(|x| &s * x).collect();
        out.push(&s * (r2 + 1.0).sqrt());
        out.extend(heights);
        debug_assert_eq!(out.len(), p + q + 1);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_chart(p: usize, q: usize, seed: u64) -> ImmersionChart {
        GraphChart::random(p, q, seed, 0.3).chart(ParamBox::cube(p, 0.5), JetMode::ClosedForm).unwrap()
    }

    #[test]
    fn totally_geodesic_has_no_second_fundamental_form() {
        let chart = GraphChart::totally_geodesic(3, 2).chart(ParamBox::cube(3, 1.0), JetMode::ClosedForm).unwrap();
        let fd = fundamental_data(&chart, &[0.2, -0.1, 0.4]).unwrap();
        assert!(fd.ii_norm_sq() < 1e-28);
        assert!(fd.mean_curvature.amax() < 1e-14);
        let nabla = covariant_derivative_ii(&chart, &[0.2, -0.1, 0.4]).unwrap();
        assert_eq!(nabla.max_abs(), 0.0);
    }

    #[test]
    fn frame_is_orthonormal_and_h_symmetric() {
        let chart = random_chart(3, 2, 11);
        let fd = fundamental_data(&chart, &[0.1, 0.2, -0.3]).unwrap();
        let g = chart.quadric().space().gram_of(&fd.frame);
        let target = DMatrix::from_fn(5, 5, |i, j| if i != j { 0.0 } else if i < 3 { 1.0 } else { -1.0 });
        assert!((g - target).amax() < 1e-9);
        for m in &fd.h {
            assert_eq!(m, &m.transpose());
        }
        for e in &fd.frame[..3] {
            assert!(chart.quadric().dot(&fd.mean_curvature, e).abs() < 1e-12);
        }
        assert!(chart.quadric().dot(&fd.mean_curvature, &fd.position).abs() < 1e-12);
    }

    #[test]
    fn tangent_frame_spans_coordinate_directions() {
        let chart = random_chart(2, 1, 3);
        let u = [0.05, -0.2];
        let jet = chart.jet(&u, 1).unwrap();
        let fd = fundamental_data(&chart, &u).unwrap();
        for a in 0..2 {
            let mut v = DVector::zeros(4);
            for i in 0..2 {
                v.axpy(fd.coord_to_frame[(i, a)], &jet.d1[i], 1.0);
            }
            assert!((v - fd.tangent(a)).amax() < 1e-12);
        }
    }

    #[test]
    fn codazzi_holds_on_random_charts() {
        for seed in 0..4 {
            let chart = random_chart(2, 2, seed);
            let nabla = covariant_derivative_ii(&chart, &[0.1, -0.1]).unwrap();
            assert!(nabla.codazzi_residual < 1e-6, "seed {seed}: {}", nabla.codazzi_residual);
            for a in 0..2 {
                for k in 0..2 {
                    assert!((nabla.get(a, k, 0, 1) - nabla.get(a, k, 1, 0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rank_one_normal_bundle_is_flat() {
        let chart = random_chart(3, 1, 5);
        let fd = fundamental_data(&chart, &[0.0, 0.1, 0.2]).unwrap();
        assert!(normal_curvature(&fd).max_abs() < 1e-15);
    }

    #[test]
    fn finite_difference_jets_agree_with_exact_ones() {
        let chart = random_chart(2, 1, 9);
        let fdc = chart.with_mode(JetMode::FiniteDifference { h: FD_JET_STEP });
        let u = [0.1, 0.2];
        let a = chart.jet(&u, 2).unwrap();
        let b = fdc.jet(&u, 2).unwrap();
        assert!((&a.d1[0] - &b.d1[0]).amax() < 1e-7);
        assert!((&a.d2[0][1] - &b.d2[0][1]).amax() < 1e-6);
    }

    #[test]
    fn out_of_domain_and_stencil_errors() {
        let chart = random_chart(2, 1, 1);
        assert!(matches!(fundamental_data(&chart, &[0.7, 0.0]), Err(ImmersionError::OutOfDomain { .. })));
        assert!(matches!(
            covariant_derivative_ii(&chart, &[0.5, 0.0]),
            Err(ImmersionError::StencilExitsDomain { .. })
        ));
    }

    #[test]
    fn bad_graph_terms_are_rejected() {
        let g = GraphChart { p: 2, q: 1, terms: vec![GraphTerm::Monomial { normal: 1, coeff: 1.0, powers: vec![1, 1] }] };
        assert!(g.chart(ParamBox::cube(2, 1.0), JetMode::ClosedForm).is_err());
    }

    #[test]
    fn steep_graph_is_not_spacelike() {
        let g = GraphChart { p: 1, q: 1, terms: vec![GraphTerm::Monomial { normal: 0, coeff: 5.0, powers: vec![1] }] };
        let chart = g.chart(ParamBox::cube(1, 1.0), JetMode::ClosedForm).unwrap();
        assert!(matches!(fundamental_data(&chart, &[0.0]), Err(ImmersionError::DegenerateMetric { .. })));
    }
}
