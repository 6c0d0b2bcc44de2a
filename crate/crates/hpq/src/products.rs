//! Model submanifolds: weighted products of hyperbolic spaces, pseudo-flats
//! (orbits of the Cartan subgroup) and their closed-form geometry.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::immersion::{
    covariant_derivative_in_frame, fundamental_data, max_commutator, ChartMap, GraphChart, GraphTerm, ImmersionChart,
    ImmersionError, JetMode, ParamBox,
};
use crate::jet::Jet;
use crate::pseudo_linalg::{AmbientVector, BasisMode, QuadraticSpace};
use crate::spaceform::Lcg;

/// `Σ α_i² = 1` is enforced to this tolerance.
pub const WEIGHT_TOL: f64 = 1e-12;
pub const DEFAULT_HALF_WIDTH: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProductError {
    #[error("factor dimensions must be positive and non-empty")]
    BadFactors,
    #[error("{n} factor dimensions but {alpha} weights")]
    LengthMismatch { n: usize, alpha: usize },
    #[error("weights must be positive with unit square sum (got Σα² = {0})")]
    BadWeights(f64),
    #[error("{k} factors need k <= q+1, got q = {q}")]
    TooManyFactors { k: usize, q: usize },
    #[error("pseudo-flats need p <= q+1, got p = {p}, q = {q}")]
    PseudoFlatUnavailable { p: usize, q: usize },
    #[error("direction must be a unit vector of length {expected}")]
    BadDirection { expected: usize },
    #[error("angle {0} outside [0, π/2)")]
    BadAngle(f64),
    #[error("a non-zero angle needs q+1 > p")]
    AngleWithoutDirection,
    #[error(transparent)]
    Immersion(#[from] ImmersionError),
}

/// Weighted product `(x_1,…,x_k) ↦ Σ α_i x_i` of `H^{n_1}×…×H^{n_k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSpec {
    pub n: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl ProductSpec {
    pub fn new(n: Vec<usize>, alpha: Vec<f64>) -> Result<Self, ProductError> {
        let s = Self { n, alpha };
        s.validate()?;
        Ok(s)
    }

    /// Weights making the product maximal.
    pub fn maximal(n: Vec<usize>) -> Result<Self, ProductError> {
        let p = n.iter().sum();
        let alpha = maximal_weights(&n, p)?;
        Self::new(n, alpha)
    }

    pub fn k(&self) -> usize {
        self.n.len()
    }

    pub fn p(&self) -> usize {
        self.n.iter().sum()
    }

    pub fn validate(&self) -> Result<(), ProductError> {
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(ProductError::BadFactors);
        }
        if self.n.len() != self.alpha.len() {
            return Err(ProductError::LengthMismatch { n: self.n.len(), alpha: self.alpha.len() });
        }
        let s: f64 = self.alpha.iter().map(|a| a * a).sum();
        if self.alpha.iter().any(|a| !(*a > 0.0)) || (s - 1.0).abs() > WEIGHT_TOL {
            return Err(ProductError::BadWeights(s));
        }
        Ok(())
    }

    pub fn validate_for(&self, q: usize) -> Result<(), ProductError> {
        self.validate()?;
        if self.k() > q + 1 {
            return Err(ProductError::TooManyFactors { k: self.k(), q });
        }
        Ok(())
    }

    fn offsets(&self) -> Vec<usize> {
        self.n
            .iter()
            .scan(0, |acc, &d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect()
    }
}

/// `α_i = √(n_i/p)`.
pub fn maximal_weights(n: &[usize], p: usize) -> Result<Vec<f64>, ProductError> {
    if n.is_empty() || n.contains(&0) || n.iter().sum::<usize>() != p {
        return Err(ProductError::BadFactors);
    }
    Ok(n.iter().map(|&d| (d as f64 / p as f64).sqrt()).collect())
}

/// Factor dimensions as equal as possible, larger ones first.
pub fn balanced_partition(p: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| p / k + usize::from(i < p % k)).collect()
}

/// Factor `i` lives in `span(e_{o+1..o+n_i}, f_{i+1})` and is parametrized by
/// iterated geodesic coordinates `y_m = cosh(u_m) y_{m−1} + sinh(u_m) e_{o+m}`,
/// `y_0 = f_{i+1}`, a global diffeomorphism `R^{n_i} → H^{n_i}`.
#[derive(Debug, Clone)]
struct ProductMap {
    spec: ProductSpec,
    q: usize,
}

impl ProductMap {
    /// Factor points as jets in ambient diagonal coordinates, unweighted.
    fn factors(&self, u: &[Jet]) -> Vec<Vec<Jet>> {
        let p = self.spec.p();
        let dim = p + self.q + 1;
        let zero = u[0].lift(0.0);
        self.spec
            .offsets()
            .iter()
            .zip(&self.spec.n)
            .enumerate()
            .map(|(i, (&o, &d))| {
                let mut y = vec![zero.clone(); dim];
                y[p + i] = u[0].lift(1.0);
                for m in 0..d {
                    let (c, s) = (u[o + m].cosh(), u[o + m].sinh());
                    for r in (o..o + m).chain(std::iter::once(p + i)) {
                        y[r] = &y[r] * &c;
                    }
                    y[o + m] = s;
                }
                y
            })
            .collect()
    }
}

impl ChartMap for ProductMap {
    fn param_dim(&self) -> usize {
        self.spec.p()
    }

    fn codim(&self) -> usize {
        self.q
    }

    fn eval(&self, u: &[Jet]) -> Vec<Jet> {
        let dim = self.spec.p() + self.q + 1;
        let mut out = vec![u[0].lift(0.0); dim];
        for (y, &a) in self.factors(u).iter().zip(&self.spec.alpha) {
            for (o, c) in out.iter_mut().zip(y) {
                *o = &*o + c * a;
            }
        }
        out
    }
}

pub fn product_chart(spec: &ProductSpec, q: usize, half_width: f64, mode: JetMode) -> Result<ImmersionChart, ProductError> {
    spec.validate_for(q)?;
    let p = spec.p();
    Ok(ImmersionChart::new(Arc::new(ProductMap { spec: spec.clone(), q }), ParamBox::cube(p, half_width), mode)?)
}

fn to_vec(js: &[Jet]) -> AmbientVector {
    DVector::from_iterator(js.len(), js.iter().map(|j| j.value()))
}

/// Unweighted factor points `x_i ∈ H^{n_i}` at the chart parameter `u`.
pub fn factor_points(spec: &ProductSpec, q: usize, u: &[f64]) -> Vec<AmbientVector> {
    let map = ProductMap { spec: spec.clone(), q };
    map.factors(&Jet::variables(u, 0)).iter().map(|y| to_vec(y)).collect()
}

/// Unit tangents of each factor at `u`, mutually orthogonal, one per parameter
/// of the factor. They are also unit tangents of the product submanifold.
pub fn factor_tangents(spec: &ProductSpec, q: usize, u: &[f64]) -> Vec<Vec<AmbientVector>> {
    let map = ProductMap { spec: spec.clone(), q };
    let factors = map.factors(&Jet::variables(u, 1));
    spec.offsets()
        .iter()
        .zip(&spec.n)
        .zip(&factors)
        .map(|((&o, &d), y)| {
            (0..d)
                .map(|m| {
                    let scale: f64 = ((m + 1)..d).map(|l| u[o + l].cosh()).product();
                    DVector::from_iterator(y.len(), y.iter().map(|c| c.d1(o + m))) / scale
                })
                .collect()
        })
        .collect()
}

/// `H = Σ (n_i/α_i − p·α_i) x_i`.
pub fn product_mean_curvature(spec: &ProductSpec, points: &[AmbientVector]) -> AmbientVector {
    let p = spec.p() as f64;
    let mut h = DVector::zeros(points[0].len());
    for ((x, &n), &a) in points.iter().zip(&spec.n).zip(&spec.alpha) {
        h.axpy(n as f64 / a - p * a, x, 1.0);
    }
    h
}

/// `II(X_i, X_i) = (1/α_i)(Σ_{j≠i} α_j²) x_i − Σ_{j≠i} α_j x_j` for any unit `X_i`
/// tangent to factor `i`.
pub fn product_ii_closed_form(spec: &ProductSpec, points: &[AmbientVector], i: usize) -> AmbientVector {
    let ai = spec.alpha[i];
    let rest: f64 = spec.alpha.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, a)| a * a).sum();
    let mut v = &points[i] * (rest / ai);
    for (j, (x, &a)) in points.iter().zip(&spec.alpha).enumerate() {
        if j != i {
            v.axpy(-a, x, 1.0);
        }
    }
    v
}

/// `Q(N_i, N_j)` by closed form: `1 − 1/α_i²` on the diagonal, `1` off it.
pub fn normal_pairings(spec: &ProductSpec) -> DMatrix<f64> {
    let k = spec.k();
    DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 - 1.0 / spec.alpha[i].powi(2) } else { 1.0 })
}

/// Scalar curvature and `‖II‖²` of a product, summed factor by factor:
/// `sec = −1/α_i²` inside factor `i`, `0` across factors.
pub fn product_invariants(spec: &ProductSpec) -> (f64, f64) {
    let scal: f64 = spec.n.iter().zip(&spec.alpha).map(|(&n, a)| -((n * (n - 1)) as f64) / (a * a)).sum();
    // n_i diagonal entries II(X,X) = N_i per factor, g_N(N_i,N_i) = 1/α_i² − 1
    let ii: f64 = spec.n.iter().zip(&spec.alpha).map(|(&n, a)| n as f64 * (1.0 / (a * a) - 1.0)).sum();
    (scal, ii)
}

/// Ricci eigenvalues of a product, `−(n_i − 1)/α_i²` with multiplicity `n_i`, descending.
pub fn product_ricci(spec: &ProductSpec) -> Vec<f64> {
    let mut ev: Vec<f64> = spec
        .n
        .iter()
        .zip(&spec.alpha)
        .flat_map(|(&n, a)| std::iter::repeat(-((n - 1) as f64) / (a * a)).take(n))
        .collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

/// Shape-operator spectrum of the maximal `H^k × H^{p−k}` in `H^{p,1}`, with the
/// unit normal oriented so the first factor's eigenvalue is positive.
pub fn split_shape_spectrum(p: usize, k: usize) -> Vec<f64> {
    let (pf, kf) = (p as f64, k as f64);
    let mut v = vec![((pf - kf) / kf).sqrt(); k];
    v.extend(std::iter::repeat(-(kf / (pf - kf)).sqrt()).take(p - k));
    v
}

/// Orbit `Σ_{μ,θ}` of `x_{μ,θ} = cos θ Σ(v_i + v_{−i}) + sin θ Σ μ_j w_j` under the
/// Cartan subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoFlatSpec {
    pub p: usize,
    pub q: usize,
    #[serde(default)]
    pub mu: Vec<f64>,
    pub theta: f64,
}

impl PseudoFlatSpec {
    /// The maximal pseudo-flat bounded by the polyhedron (θ = 0).
    pub fn maximal(p: usize, q: usize) -> Result<Self, ProductError> {
        let mut mu = vec![0.0; (q + 1).saturating_sub(p)];
        if let Some(m) = mu.first_mut() {
            *m = 1.0;
        }
        let s = Self { p, q, mu, theta: 0.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ProductError> {
        let (p, q) = (self.p, self.q);
        if p == 0 || p > q + 1 {
            return Err(ProductError::PseudoFlatUnavailable { p, q });
        }
        let extra = q + 1 - p;
        let n2: f64 = self.mu.iter().map(|m| m * m).sum();
        if self.mu.len() != extra || (extra > 0 && (n2 - 1.0).abs() > WEIGHT_TOL) {
            return Err(ProductError::BadDirection { expected: extra });
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.theta) {
            return Err(ProductError::BadAngle(self.theta));
        }
        if extra == 0 && self.theta != 0.0 {
            return Err(ProductError::AngleWithoutDirection);
        }
        Ok(())
    }

    /// `x_{μ,θ}` in Cartan coordinates.
    pub fn base_point_cartan(&self) -> AmbientVector {
        let (p, q) = (self.p, self.q);
        let n = p + q + 1;
        let (s, c) = self.theta.sin_cos();
        let mut x = DVector::zeros(n);
        for i in 0..p {
            x[i] = c;
            x[n - 1 - i] = c;
        }
        for (j, m) in self.mu.iter().enumerate() {
            x[p + j] = s * m;
        }
        x
    }

    /// Mean curvature at `a(u)·x_{μ,θ}` in Cartan coordinates:
    /// `(p sin²θ / cos θ) a(u)Σ(v_i + v_{−i}) − p sin θ Σ μ_j w_j`.
    pub fn mean_curvature_cartan(&self, u: &[f64]) -> AmbientVector {
        self.mean_curvature_with(u, self.p as f64)
    }

    /// The same expression with the leading factor `√p`; it is the mean curvature
    /// for the rescaled null basis `√p·v_{±i}` and is kept for comparison.
    pub fn mean_curvature_rescaled_basis(&self, u: &[f64]) -> AmbientVector {
        self.mean_curvature_with(u, (self.p as f64).sqrt())
    }

    fn mean_curvature_with(&self, u: &[f64], lead: f64) -> AmbientVector {
        let (p, q) = (self.p, self.q);
        let n = p + q + 1;
        let (s, c) = self.theta.sin_cos();
        let mut h = DVector::zeros(n);
        for i in 0..p {
            h[i] = lead * s * s / c * u[i].exp();
            h[n - 1 - i] = lead * s * s / c * (-u[i]).exp();
        }
        for (j, m) in self.mu.iter().enumerate() {
            h[p + j] = -(p as f64) * s * m;
        }
        h
    }

    /// `‖H‖ = p·tan θ`.
    pub fn mean_curvature_norm(&self) -> f64 {
        self.p as f64 * self.theta.tan()
    }
}

/// Element `a(u) = diag(e^{u_1},…,e^{u_p}, 1,…,1, e^{−u_p},…,e^{−u_1})` of the
/// Cartan subgroup, acting on Cartan coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartanElement {
    pub u: Vec<f64>,
}

impl CartanElement {
    pub fn matrix(&self, q: usize) -> DMatrix<f64> {
        let p = self.u.len();
        let n = p + q + 1;
        let mut m = DMatrix::identity(n, n);
        for (i, &x) in self.u.iter().enumerate() {
            m[(i, i)] = x.exp();
            m[(n - 1 - i, n - 1 - i)] = (-x).exp();
        }
        m
    }

    pub fn act(&self, q: usize, v: &AmbientVector) -> AmbientVector {
        self.matrix(q) * v
    }

    /// The same element acting on diagonal coordinates.
    pub fn matrix_standard(&self, q: usize) -> DMatrix<f64> {
        let space = QuadraticSpace::cartan(self.u.len(), q).expect("p <= q+1");
        let to_std = space.basis_change_matrix(BasisMode::Standard).unwrap();
        let to_cartan = space.in_mode(BasisMode::Standard).unwrap().basis_change_matrix(BasisMode::Cartan).unwrap();
        to_std * self.matrix(q) * to_cartan
    }
}

#[derive(Debug, Clone)]
struct PseudoFlatMap {
    spec: PseudoFlatSpec,
    to_standard: DMatrix<f64>,
}

impl ChartMap for PseudoFlatMap {
    fn param_dim(&self) -> usize {
        self.spec.p
    }

    fn codim(&self) -> usize {
        self.spec.q
    }

    fn eval(&self, u: &[Jet]) -> Vec<Jet> {
        let (p, q) = (self.spec.p, self.spec.q);
        let n = p + q + 1;
        let x0 = self.spec.base_point_cartan();
        let mut cartan: Vec<Jet> = x0.iter().map(|&c| u[0].lift(c)).collect();
        for i in 0..p {
            cartan[i] = u[i].exp() * x0[i];
            cartan[n - 1 - i] = (-&u[i]).exp() * x0[n - 1 - i];
        }
        (0..n)
            .map(|r| {
                let mut acc = u[0].lift(0.0);
                for (c, jet) in cartan.iter().enumerate() {
                    let t = self.to_standard[(r, c)];
                    if t != 0.0 {
                        acc = acc + jet * t;
                    }
                }
                acc
            })
            .collect()
    }
}

/// Chart `u ↦ a(u)·x_{μ,θ}`, returned in diagonal coordinates.
pub fn pseudoflat_chart(spec: &PseudoFlatSpec, half_width: f64, mode: JetMode) -> Result<ImmersionChart, ProductError> {
    spec.validate()?;
    let space = QuadraticSpace::cartan(spec.p, spec.q).map_err(ImmersionError::from)?;
    let to_standard = space.basis_change_matrix(BasisMode::Standard).map_err(ImmersionError::from)?;
    let map = PseudoFlatMap { spec: spec.clone(), to_standard };
    Ok(ImmersionChart::new(Arc::new(map), ParamBox::cube(spec.p, half_width), mode)?)
}

/// Largest `|∇II|` component and commutator norm over sampled points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParallelFlatCertificate {
    pub max_grad_ii: f64,
    pub max_commutator: f64,
}

pub fn parallel_flat_certificate(chart: &ImmersionChart, samples: usize, seed: u64) -> Result<ParallelFlatCertificate, ProductError> {
    let mut rng = Lcg::new(seed);
    let margin = 4.0 * chart.outer_step();
    let mut cert = ParallelFlatCertificate { max_grad_ii: 0.0, max_commutator: 0.0 };
    for _ in 0..samples {
        let u = chart.domain().sample(&mut rng, margin);
        let fd = fundamental_data(chart, &u)?;
        let nabla = covariant_derivative_in_frame(chart, &u, &fd)?;
        cert.max_grad_ii = cert.max_grad_ii.max(nabla.max_abs());
        cert.max_commutator = cert.max_commutator.max(max_commutator(&fd));
    }
    Ok(cert)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKeyword {
    Maximal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    Values(Vec<f64>),
    Keyword(WeightKeyword),
}

/// JSON chart description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChartSpec {
    Product {
        n: Vec<usize>,
        alpha: Weights,
        q: usize,
        #[serde(default)]
        half_width: Option<f64>,
    },
    Pseudoflat {
        p: usize,
        q: usize,
        #[serde(default)]
        mu: Vec<f64>,
        theta: f64,
        #[serde(default)]
        half_width: Option<f64>,
    },
    Graph {
        p: usize,
        q: usize,
        terms: Vec<GraphTerm>,
        #[serde(default)]
        half_width: Option<f64>,
    },
}

impl ChartSpec {
    pub fn p(&self) -> usize {
        match self {
            ChartSpec::Product { n, .. } => n.iter().sum(),
            ChartSpec::Pseudoflat { p, .. } | ChartSpec::Graph { p, .. } => *p,
        }
    }

    pub fn q(&self) -> usize {
        match self {
            ChartSpec::Product { q, .. } | ChartSpec::Pseudoflat { q, .. } | ChartSpec::Graph { q, .. } => *q,
        }
    }

    pub fn product_spec(&self) -> Result<Option<ProductSpec>, ProductError> {
        match self {
            ChartSpec::Product { n, alpha, .. } => Ok(Some(match alpha {
                Weights::Values(a) => ProductSpec::new(n.clone(), a.clone())?,
                Weights::Keyword(WeightKeyword::Maximal) => ProductSpec::maximal(n.clone())?,
            })),
            _ => Ok(None),
        }
    }

    pub fn build(&self, mode: JetMode) -> Result<ImmersionChart, ProductError> {
        match self {
            ChartSpec::Product { q, half_width, .. } => {
                let spec = self.product_spec()?.expect("product");
                product_chart(&spec, *q, half_width.unwrap_or(DEFAULT_HALF_WIDTH), mode)
            }
            ChartSpec::Pseudoflat { p, q, mu, theta, half_width } => {
                let spec = PseudoFlatSpec { p: *p, q: *q, mu: mu.clone(), theta: *theta };
                pseudoflat_chart(&spec, half_width.unwrap_or(DEFAULT_HALF_WIDTH), mode)
            }
            ChartSpec::Graph { p, q, terms, half_width } => {
                let g = GraphChart { p: *p, q: *q, terms: terms.clone() };
                Ok(g.chart(ParamBox::cube(*p, half_width.unwrap_or(0.5)), mode)?)
            }
        }
    }
}
