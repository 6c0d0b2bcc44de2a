//! Indefinite linear algebra on `R^{p,q+1}`.
//!
//! Vectors are plain coordinate columns. A [`QuadraticSpace`] knows which basis
//! the coordinates refer to and evaluates the form accordingly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coordinates of a vector of the ambient space in the basis of some [`QuadraticSpace`].
pub type AmbientVector = DVector<f64>;

/// Relative width of the band treated as null by [`QuadraticSpace::causal_type`].
pub const LIGHTLIKE_TOL: f64 = 1e-10;
/// Smallest admissible pivot in [`QuadraticSpace::pseudo_orthonormalize`], relative to the input scale.
pub const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector has no causal type")]
    ZeroVector,
    #[error("degenerate span: pivot {pivot:e} below tolerance while looking for a {sign} vector")]
    Degenerate { pivot: f64, sign: &'static str },
    #[error("cartan basis needs p <= q+1 (p={p}, q={q})")]
    CartanUnavailable { p: usize, q: usize },
    #[error("invalid signature p={p}, q={q}")]
    BadSignature { p: usize, q: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMode {
    Standard,
    Cartan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CausalType {
    Timelike,
    Spacelike,
    Lightlike,
}

/// The form of signature `(p, q+1)` in either the diagonal basis
/// `(e_1..e_p, f_1..f_{q+1})` or the null block basis
/// `(v_1..v_p, w_1..w_{q+1-p}, v_{-p}..v_{-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpace {
    p: usize,
    q: usize,
    mode: BasisMode,
    gram: DMatrix<f64>,
    // nonzero entries (i, j, g_ij) with i <= j
    entries: Vec<(usize, usize, f64)>,
}

impl QuadraticSpace {
    pub fn standard(p: usize, q: usize) -> Result<Self, LinalgError> {
        if p == 0 {
            return Err(LinalgError::BadSignature { p, q });
        }
        let n = p + q + 1;
        let gram = DMatrix::from_fn(n, n, |i, j| match (i == j, i < p) {
            (true, true) => 1.0,
            (true, false) => -1.0,
            _ => 0.0,
        });
        Ok(Self::from_gram(p, q, BasisMode::Standard, gram))
    }

    pub fn cartan(p: usize, q: usize) -> Result<Self, LinalgError> {
        if p == 0 {
            return Err(LinalgError::BadSignature { p, q });
        }
        if p > q + 1 {
            return Err(LinalgError::CartanUnavailable { p, q });
        }
        let n = p + q + 1;
        let pair = -1.0 / (2.0 * p as f64);
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..p {
            gram[(i, n - 1 - i)] = pair;
            gram[(n - 1 - i, i)] = pair;
        }
        for k in p..(n - p) {
            gram[(k, k)] = -1.0;
        }
        Ok(Self::from_gram(p, q, BasisMode::Cartan, gram))
    }

    pub fn new(p: usize, q: usize, mode: BasisMode) -> Result<Self, LinalgError> {
        match mode {
            BasisMode::Standard => Self::standard(p, q),
            BasisMode::Cartan => Self::cartan(p, q),
        }
    }

    fn from_gram(p: usize, q: usize, mode: BasisMode, gram: DMatrix<f64>) -> Self {
        let n = gram.nrows();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in i..n {
                if gram[(i, j)] != 0.0 {
                    entries.push((i, j, gram[(i, j)]));
                }
            }
        }
        Self { p, q, mode, gram, entries }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.p + self.q + 1
    }

    pub fn mode(&self) -> BasisMode {
        self.mode
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Same signature, other basis.
    pub fn in_mode(&self, mode: BasisMode) -> Result<Self, LinalgError> {
        Self::new(self.p, self.q, mode)
    }

    fn check(&self, v: &AmbientVector) -> Result<(), LinalgError> {
        if v.len() != self.dim() {
            return Err(LinalgError::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        Ok(())
    }

    /// `aᵀ G b`, checked.
    pub fn q_inner(&self, a: &AmbientVector, b: &AmbientVector) -> Result<f64, LinalgError> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.dot(a, b))
    }

    /// Unchecked form evaluation. Off-diagonal terms are accumulated as
    /// `g_ij (a_i b_j + a_j b_i)` so swapping the arguments gives the same bits.
    pub fn dot(&self, a: &AmbientVector, b: &AmbientVector) -> f64 {
        debug_assert_eq!(a.len(), self.dim());
        debug_assert_eq!(b.len(), self.dim());
        let mut s = 0.0;
        for &(i, j, g) in &self.entries {
            if i == j {
                s += g * (a[i] * b[i]);
            } else {
                s += g * (a[i] * b[j] + a[j] * b[i]);
            }
        }
        s
    }

    pub fn norm_sq(&self, v: &AmbientVector) -> f64 {
        self.dot(v, v)
    }

    pub fn causal_type(&self, v: &AmbientVector) -> Result<CausalType, LinalgError> {
        self.check(v)?;
        let e = v.norm_squared();
        if e == 0.0 {
            return Err(LinalgError::ZeroVector);
        }
        let qv = self.dot(v, v);
        Ok(if qv.abs() < LIGHTLIKE_TOL * e {
            CausalType::Lightlike
        } else if qv > 0.0 {
            CausalType::Spacelike
        } else {
            CausalType::Timelike
        })
    }

    /// Gram matrix `Q(v_i, v_j)` of a family.
    pub fn gram_of(&self, vs: &[AmbientVector]) -> DMatrix<f64> {
        let m = vs.len();
        DMatrix::from_fn(m, m, |i, j| self.dot(&vs[i], &vs[j]))
    }

    /// Extracts `n_plus` vectors with `Q = +1` and then `n_minus` with `Q = -1`,
    /// mutually orthogonal, from the span of `vs`.
    ///
    /// Pivoting is greedy on the largest `|Q|` among the remaining (projected)
    /// candidates. When every candidate is close to null a pair `w_i ± w_j` is
    /// used instead. Each output has its first significant coordinate positive.
    pub fn pseudo_orthonormalize(
        &self,
        vs: &[AmbientVector],
        n_plus: usize,
        n_minus: usize,
    ) -> Result<Vec<AmbientVector>, LinalgError> {
        for v in vs {
            self.check(v)?;
        }
        let scale = vs.iter().map(|v| v.norm_squared()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let tol = PIVOT_TOL * scale;
        let mut work: Vec<AmbientVector> = vs.to_vec();
        let mut out = Vec::with_capacity(n_plus + n_minus);
        for (count, sign) in [(n_plus, 1.0), (n_minus, -1.0)] {
            for _ in 0..count {
                let u = self.pick_pivot(&work, sign, tol)?;
                for w in work.iter_mut() {
                    let c = sign * self.dot(w, &u);
                    w.axpy(-c, &u, 1.0);
                }
                out.push(u);
            }
        }
        Ok(out)
    }

    fn pick_pivot(&self, work: &[AmbientVector], sign: f64, tol: f64) -> Result<AmbientVector, LinalgError> {
        let label = if sign > 0.0 { "spacelike" } else { "timelike" };
        let m = work.len();
        let g = self.gram_of(work);
        let mut best_single: Option<(usize, f64)> = None;
        for i in 0..m {
            let val = sign * g[(i, i)];
            if best_single.map_or(true, |(_, b)| val > b) {
                best_single = Some((i, val));
            }
        }
        let mut best_pair: Option<(usize, usize, f64, f64)> = None;
        for i in 0..m {
            for j in (i + 1)..m {
                let s = if sign * g[(i, j)] >= 0.0 { 1.0 } else { -1.0 };
                let val = sign * (g[(i, i)] + g[(j, j)] + 2.0 * s * g[(i, j)]);
                if best_pair.map_or(true, |(_, _, _, b)| val > b) {
                    best_pair = Some((i, j, s, val));
                }
            }
        }
        let single = best_single.map_or(f64::NEG_INFINITY, |b| b.1);
        let pair = best_pair.map_or(f64::NEG_INFINITY, |b| b.3);
        // near-null singles lose accuracy when normalized
        let mut u = if single >= tol && single >= 1e-3 * pair {
            work[best_single.unwrap().0].clone()
        } else if pair >= tol {
            let (i, j, s, _) = best_pair.unwrap();
            &work[i] + &work[j] * s
        } else {
            return Err(LinalgError::Degenerate { pivot: single.max(pair), sign: label });
        };
        let nrm = (sign * self.dot(&u, &u)).sqrt();
        u /= nrm;
        fix_sign(&mut u);
        Ok(u)
    }

    /// Matrix `T` with `coords_in(to) = T · coords_in(self.mode)`.
    pub fn basis_change_matrix(&self, to: BasisMode) -> Result<DMatrix<f64>, LinalgError> {
        let n = self.dim();
        if self.mode == to {
            return Ok(DMatrix::identity(n, n));
        }
        if self.p > self.q + 1 {
            return Err(LinalgError::CartanUnavailable { p: self.p, q: self.q });
        }
        let c2s = cartan_to_standard(self.p, self.q);
        Ok(match to {
            BasisMode::Standard => c2s,
            BasisMode::Cartan => standard_to_cartan(self.p, self.q),
        })
    }

    pub fn change_basis(&self, v: &AmbientVector, to: BasisMode) -> Result<AmbientVector, LinalgError> {
        self.check(v)?;
        Ok(self.basis_change_matrix(to)? * v)
    }
}

/// Columns are the null block basis vectors written in the diagonal basis:
/// `v_{±i} = (±e_i + f_i) / (2√p)`, `w_j = f_{p+j}`.
fn cartan_to_standard(p: usize, q: usize) -> DMatrix<f64> {
    let n = p + q + 1;
    let a = 1.0 / (2.0 * (p as f64).sqrt());
    let mut t = DMatrix::zeros(n, n);
    for i in 0..p {
        t[(i, i)] = a;
        t[(p + i, i)] = a;
        t[(i, n - 1 - i)] = -a;
        t[(p + i, n - 1 - i)] = a;
    }
    for j in 0..(q + 1 - p) {
        t[(2 * p + j, p + j)] = 1.0;
    }
    t
}

fn standard_to_cartan(p: usize, q: usize) -> DMatrix<f64> {
    let n = p + q + 1;
    let b = (p as f64).sqrt();
    let mut t = DMatrix::zeros(n, n);
    for i in 0..p {
        // e_i = √p (v_i - v_{-i}),  f_i = √p (v_i + v_{-i})
        t[(i, i)] = b;
        t[(n - 1 - i, i)] = -b;
        t[(i, p + i)] = b;
        t[(n - 1 - i, p + i)] = b;
    }
    for j in 0..(q + 1 - p) {
        t[(p + j, 2 * p + j)] = 1.0;
    }
    t
}

/// Flips `v` so its first coordinate that is not negligible is positive.
pub fn fix_sign(v: &mut AmbientVector) {
    let m = v.amax();
    if let Some(x) = v.iter().copied().find(|x| x.abs() > 1e-12 * m) {
        if x < 0.0 {
            v.neg_mut();
        }
    }
}

/// Number of positive and negative eigenvalues of a symmetric matrix, with a
/// relative zero band.
pub fn signature(m: &DMatrix<f64>, rel_tol: f64) -> (usize, usize) {
    let ev = m.clone().symmetric_eigen().eigenvalues;
    let scale = ev.amax().max(f64::MIN_POSITIVE);
    let pos = ev.iter().filter(|&&x| x > rel_tol * scale).count();
    let neg = ev.iter().filter(|&&x| x < -rel_tol * scale).count();
    (pos, neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, i: usize) -> AmbientVector {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    #[test]
    fn standard_diagonal_values() {
        let s = QuadraticSpace::standard(2, 1).unwrap();
        assert_eq!(s.q_inner(&unit(4, 0), &unit(4, 0)).unwrap(), 1.0);
        assert_eq!(s.q_inner(&unit(4, 3), &unit(4, 3)).unwrap(), -1.0);
    }

    #[test]
    fn cartan_pairing_is_minus_quarter_for_p2() {
        let s = QuadraticSpace::cartan(2, 1).unwrap();
        assert_eq!(s.q_inner(&unit(4, 0), &unit(4, 3)).unwrap(), -0.25);
        assert_eq!(s.causal_type(&unit(4, 0)).unwrap(), CausalType::Lightlike);
    }

    #[test]
    fn both_modes_have_signature_p_q_plus_one() {
        for (p, q) in [(1, 0), (2, 1), (2, 3), (3, 2), (4, 3)] {
            for mode in [BasisMode::Standard, BasisMode::Cartan] {
                let s = QuadraticSpace::new(p, q, mode).unwrap();
                assert_eq!(signature(s.gram(), 1e-12), (p, q + 1));
            }
        }
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let s = QuadraticSpace::standard(2, 1).unwrap();
        let err = s.q_inner(&unit(4, 0), &unit(3, 0)).unwrap_err();
        assert_eq!(err, LinalgError::DimensionMismatch { expected: 4, found: 3 });
        assert_eq!(s.causal_type(&DVector::zeros(4)).unwrap_err(), LinalgError::ZeroVector);
    }

    #[test]
    fn causal_types_of_basis_vectors() {
        let s = QuadraticSpace::standard(2, 2).unwrap();
        assert_eq!(s.causal_type(&unit(5, 0)).unwrap(), CausalType::Spacelike);
        assert_eq!(s.causal_type(&unit(5, 2)).unwrap(), CausalType::Timelike);
    }

    #[test]
    fn orthonormal_basis_is_returned_unchanged() {
        let s = QuadraticSpace::standard(2, 1).unwrap();
        let basis: Vec<_> = (0..4).map(|i| unit(4, i)).collect();
        let out = s.pseudo_orthonormalize(&basis, 2, 2).unwrap();
        for (a, b) in out.iter().zip(&basis) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn null_basis_is_orthonormalized() {
        let s = QuadraticSpace::cartan(2, 1).unwrap();
        let basis: Vec<_> = (0..4).map(|i| unit(4, i)).collect();
        let out = s.pseudo_orthonormalize(&basis, 2, 2).unwrap();
        let g = s.gram_of(&out);
        let target = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]));
        assert!((g - target).amax() < 1e-12);
    }

    #[test]
    fn proportional_vectors_are_degenerate() {
        let s = QuadraticSpace::standard(2, 1).unwrap();
        let a = DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0]);
        let b = &a * 3.0;
        assert!(matches!(s.pseudo_orthonormalize(&[a, b], 2, 0), Err(LinalgError::Degenerate { .. })));
    }

    #[test]
    fn cartan_refused_when_p_too_large() {
        assert_eq!(QuadraticSpace::cartan(3, 1).unwrap_err(), LinalgError::CartanUnavailable { p: 3, q: 1 });
        let s = QuadraticSpace::standard(3, 1).unwrap();
        assert!(s.change_basis(&unit(5, 0), BasisMode::Cartan).is_err());
    }

    #[test]
    fn base_point_of_null_basis_lies_on_quadric() {
        let c = QuadraticSpace::cartan(2, 1).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let y = c.change_basis(&x, BasisMode::Standard).unwrap();
        let s = QuadraticSpace::standard(2, 1).unwrap();
        assert!((s.q_inner(&y, &y).unwrap() + 1.0).abs() < 1e-14);
        let v1 = c.change_basis(&unit(4, 0), BasisMode::Standard).unwrap();
        assert_eq!(s.causal_type(&v1).unwrap(), CausalType::Lightlike);
    }

    #[test]
    fn round_trip_is_identity() {
        let s = QuadraticSpace::standard(3, 4).unwrap();
        let c = s.in_mode(BasisMode::Cartan).unwrap();
        let v = DVector::from_fn(8, |i, _| (i as f64 * 0.7).sin());
        let back = c.change_basis(&s.change_basis(&v, BasisMode::Cartan).unwrap(), BasisMode::Standard).unwrap();
        assert!((back - v).amax() < 1e-12);
    }
}
