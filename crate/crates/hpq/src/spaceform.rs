//! The quadric `H^{p,q} = {Q(x) = -1}`, its null boundary and the polyhedron
//! spanned by the null block basis.
//!
//! Everything here works in the diagonal basis of `R^{p,q+1}`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pseudo_linalg::{AmbientVector, BasisMode, CausalType, LinalgError, QuadraticSpace};

/// Tolerance on `|Q(x)+1|` for a point to count as lying on the quadric.
pub const QUADRIC_TOL: f64 = 1e-9;
/// Tolerance on orthogonality and unit length of geodesic directions.
pub const TANGENT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceformError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("point is off the quadric: Q(x)+1 = {0:e}")]
    OffQuadric(f64),
    #[error("vector is not timelike, cannot be normalized onto the quadric")]
    NotTimelike,
    #[error("direction is not a unit tangent: Q(x,X) = {inner:e}, Q(X,X) = {norm:e}")]
    NotUnitTangent { inner: f64, norm: f64 },
    #[error("ray representative is not lightlike")]
    NotLightlike,
    #[error("ray set must have p={p}, q={q} and vectors of length {len}")]
    BadRaySet { p: usize, q: usize, len: usize },
}

/// `H^{p,q}` inside `R^{p,q+1}` with the diagonal form.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadric {
    space: QuadraticSpace,
}

/// A point with `Q(x) = -1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadricPoint(pub AmbientVector);

impl QuadricPoint {
    pub fn vec(&self) -> &AmbientVector {
        &self.0
    }
}

/// A point of the Einstein universe: a lightlike half-line. The stored
/// representative has sup-norm 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryRay {
    rep: AmbientVector,
}

impl BoundaryRay {
    pub fn rep(&self) -> &AmbientVector {
        &self.rep
    }

    /// Returns true when `self` and `other` are the same half-line up to `tol`.
    pub fn same_ray(&self, other: &BoundaryRay, tol: f64) -> bool {
        (&self.rep - &other.rep).amax() <= tol
    }

    pub fn antipodal(&self, other: &BoundaryRay, tol: f64) -> bool {
        (&self.rep + &other.rep).amax() <= tol
    }
}

impl Quadric {
    pub fn new(p: usize, q: usize) -> Result<Self, SpaceformError> {
        Ok(Self { space: QuadraticSpace::standard(p, q)? })
    }

    pub fn space(&self) -> &QuadraticSpace {
        &self.space
    }

    pub fn p(&self) -> usize {
        self.space.p()
    }

    pub fn q(&self) -> usize {
        self.space.q()
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn dot(&self, a: &AmbientVector, b: &AmbientVector) -> f64 {
        self.space.dot(a, b)
    }

    pub fn point(&self, v: AmbientVector) -> Result<QuadricPoint, SpaceformError> {
        let r = self.space.q_inner(&v, &v)? + 1.0;
        if r.abs() >= QUADRIC_TOL {
            return Err(SpaceformError::OffQuadric(r));
        }
        Ok(QuadricPoint(v))
    }

    /// Rescales a timelike vector onto the quadric.
    pub fn normalize(&self, v: &AmbientVector) -> Result<QuadricPoint, SpaceformError> {
        let n = self.space.q_inner(v, v)?;
        if !(n < 0.0) {
            return Err(SpaceformError::NotTimelike);
        }
        Ok(QuadricPoint(v / (-n).sqrt()))
    }

    /// The base point `(0, …, 0, 1, 0, …)` with the 1 on the first timelike slot.
    pub fn origin(&self) -> QuadricPoint {
        let mut v = DVector::zeros(self.dim());
        v[self.p()] = 1.0;
        QuadricPoint(v)
    }

    /// `cosh(t) x + sinh(t) X` for a unit spacelike `X` orthogonal to `x`.
    pub fn geodesic(&self, x: &QuadricPoint, dir: &AmbientVector, t: f64) -> Result<QuadricPoint, SpaceformError> {
        let inner = self.space.q_inner(&x.0, dir)?;
        let norm = self.space.dot(dir, dir);
        if inner.abs() > TANGENT_TOL || (norm - 1.0).abs() > TANGENT_TOL {
            return Err(SpaceformError::NotUnitTangent { inner, norm });
        }
        Ok(QuadricPoint(&x.0 * t.cosh() + dir * t.sinh()))
    }

    /// Velocity of the same geodesic at time `t`.
    pub fn geodesic_velocity(&self, x: &QuadricPoint, dir: &AmbientVector, t: f64) -> AmbientVector {
        &x.0 * t.sinh() + dir * t.cosh()
    }

    pub fn tangent_projector(&self, x: &QuadricPoint) -> TangentProjector<'_> {
        TangentProjector { quadric: self, x: x.0.clone() }
    }

    /// Hyperbolic distance between spacelike-separated points (`Q(x,y) <= -1`).
    pub fn distance(&self, x: &AmbientVector, y: &AmbientVector) -> Option<f64> {
        let c = -self.space.dot(x, y);
        (c >= 1.0 - 1e-12).then(|| c.max(1.0).acosh())
    }

    pub fn ray(&self, v: &AmbientVector) -> Result<BoundaryRay, SpaceformError> {
        if self.space.causal_type(v)? != CausalType::Lightlike {
            return Err(SpaceformError::NotLightlike);
        }
        Ok(BoundaryRay { rep: v / v.amax() })
    }

    /// `2 Q(x,y) Q(x,z) Q(y,z)`, the Gram determinant of three null vectors.
    pub fn gram_triple_test(&self, a: &BoundaryRay, b: &BoundaryRay, c: &BoundaryRay) -> f64 {
        2.0 * self.dot(&a.rep, &b.rep) * self.dot(&a.rep, &c.rep) * self.dot(&b.rep, &c.rep)
    }
}

/// `v ↦ v + Q(v,x) x`, the Q-orthogonal projection onto `T_x H^{p,q}`.
#[derive(Debug, Clone)]
pub struct TangentProjector<'a> {
    quadric: &'a Quadric,
    x: AmbientVector,
}

impl TangentProjector<'_> {
    pub fn apply(&self, v: &AmbientVector) -> AmbientVector {
        v + &self.x * self.quadric.dot(v, &self.x)
    }
}

/// The null polyhedron with vertices `v_{±1}, …, v_{±p}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    p: usize,
    q: usize,
    // v_1..v_p then v_{-1}..v_{-p}, in diagonal coordinates
    vertices: Vec<BoundaryRay>,
}

impl Polyhedron {
    pub fn new(p: usize, q: usize) -> Result<Self, SpaceformError> {
        let cartan = QuadraticSpace::cartan(p, q)?;
        let t = cartan.basis_change_matrix(BasisMode::Standard)?;
        let quadric = Quadric::new(p, q)?;
        let n = p + q + 1;
        let mut vertices = Vec::with_capacity(2 * p);
        for col in (0..p).chain((0..p).map(|i| n - 1 - i)) {
            vertices.push(quadric.ray(&t.column(col).into_owned())?);
        }
        Ok(Self { p, q, vertices })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Vertex `v_i` for `i` in `±1..=±p`.
    pub fn vertex(&self, i: i32) -> &BoundaryRay {
        let k = i.unsigned_abs() as usize;
        assert!(k >= 1 && k <= self.p, "vertex index out of range");
        if i > 0 {
            &self.vertices[k - 1]
        } else {
            &self.vertices[self.p + k - 1]
        }
    }

    pub fn vertices(&self) -> &[BoundaryRay] {
        &self.vertices
    }

    /// The ray `[Σ t_i v_{ε(i)}]`; `signs[i]` selects `v_{i+1}` or `v_{-(i+1)}`.
    pub fn point(&self, signs: &[bool], weights: &[f64]) -> Result<BoundaryRay, SpaceformError> {
        assert_eq!(signs.len(), self.p);
        assert_eq!(weights.len(), self.p);
        let quadric = Quadric::new(self.p, self.q)?;
        let mut v = DVector::zeros(self.p + self.q + 1);
        for i in 0..self.p {
            let idx = (i + 1) as i32;
            let vert = self.vertex(if signs[i] { idx } else { -idx });
            v.axpy(weights[i], vert.rep(), 1.0);
        }
        quadric.ray(&v)
    }

    /// `n` seeded samples on the faces. Weights come from normalized uniform
    /// draws and signs from single LCG bits.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<BoundaryRay>, SpaceformError> {
        let mut rng = Lcg::new(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let signs: Vec<bool> = (0..self.p).map(|_| rng.next_u64() >> 63 == 1).collect();
            let mut w: Vec<f64> = (0..self.p).map(|_| rng.next_f64() + 1e-3).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            out.push(self.point(&signs, &w)?);
        }
        Ok(out)
    }

    pub fn to_document(&self) -> RaySet {
        RaySet::from_rays(self.p, self.q, &self.vertices)
    }
}

/// JSON form `{"p":…,"q":…,"vertices":[[…]]}` of a list of rays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaySet {
    pub p: usize,
    pub q: usize,
    pub vertices: Vec<Vec<f64>>,
}

impl RaySet {
    pub fn from_rays(p: usize, q: usize, rays: &[BoundaryRay]) -> Self {
        Self { p, q, vertices: rays.iter().map(|r| r.rep.iter().copied().collect()).collect() }
    }

    pub fn rays(&self) -> Result<Vec<BoundaryRay>, SpaceformError> {
        let quadric = Quadric::new(self.p, self.q)?;
        let len = quadric.dim();
        self.vertices
            .iter()
            .map(|v| {
                if v.len() != len {
                    return Err(SpaceformError::BadRaySet { p: self.p, q: self.q, len });
                }
                quadric.ray(&DVector::from_column_slice(v))
            })
            .collect()
    }
}

/// 64-bit linear congruential generator, `s ← a·s + c mod 2^64` with
/// Knuth's MMIX constants. Outputs are the state after the step.
#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub const MUL: u64 = 6364136223846793005;
    pub const INC: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(Self::MUL).wrapping_add(Self::INC);
        self.state
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal by Box–Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(1e-300);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
