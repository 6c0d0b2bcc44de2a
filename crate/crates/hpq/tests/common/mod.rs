//! Independent oracles shared by the integration tests. Nothing here calls the
//! library's curvature or product code; charts are rebuilt from first principles.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Diagonal form `diag(+1 × p, −1 × (q+1))`.
pub fn q_dot(p: usize, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).enumerate().map(|(i, (x, y))| if i < p { x * y } else { -x * y }).sum()
}

/// Sectional curvature of the frame plane `(e_i, e_j)` by the Gauss equation
/// with timelike normals: `c − Σ_α (h_ii h_jj − h_ij²)`.
pub fn sectional(h: &[DMatrix<f64>], c: f64, i: usize, j: usize) -> f64 {
    c - h.iter().map(|m| m[(i, i)] * m[(j, j)] - m[(i, j)] * m[(i, j)]).sum::<f64>()
}

/// Ricci tensor by brute-force contraction of the Gauss equation.
pub fn ricci(h: &[DMatrix<f64>], c: f64) -> DMatrix<f64> {
    let p = h.first().map_or(0, |m| m.nrows());
    DMatrix::from_fn(p, p, |i, k| {
        let mut v = if i == k { (p as f64 - 1.0) * c } else { 0.0 };
        for m in h {
            let tr = m.trace();
            let sq: f64 = (0..p).map(|j| m[(i, j)] * m[(j, k)]).sum();
            v -= tr * m[(i, k)] - sq;
        }
        v
    })
}

pub fn scalar(h: &[DMatrix<f64>], c: f64) -> f64 {
    let p = h.first().map_or(0, |m| m.nrows());
    let mut s = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                s += sectional(h, c, i, j);
            }
        }
    }
    s
}

pub fn random_symmetric(p: usize, rng: &mut impl FnMut() -> f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(p, p, |_, _| rng());
    (&m + m.transpose()) * 0.5
}

/// Closed-form invariants of a product of hyperbolic factors of dimensions `n`
/// and radii `alpha`, summed factor by factor: within factor `i` the sectional
/// curvature is `−1/α_i²`, across factors it is zero, and the unit normal of
/// factor `i` has `‖II(e,e)‖² = 1/α_i² − 1`.
pub fn product_scal(n: &[usize], alpha: &[f64]) -> f64 {
    n.iter().zip(alpha).map(|(&k, a)| -((k * k.saturating_sub(1)) as f64) / (a * a)).sum()
}

pub fn product_ii_norm_sq(n: &[usize], alpha: &[f64]) -> f64 {
    n.iter().zip(alpha).map(|(&k, a)| k as f64 * (1.0 / (a * a) - 1.0)).sum()
}

/// Maximal radii: the mean curvature `Σ(n_i/α_i − pα_i)x_i` vanishes iff `α_i² = n_i/p`.
pub fn maximal_alpha(n: &[usize]) -> Vec<f64> {
    let p: usize = n.iter().sum();
    n.iter().map(|&k| (k as f64 / p as f64).sqrt()).collect()
}

/// `H^k × H^{p−k} ⊂ H^{p,1}` written out by hand:
/// `x = α₁(√(1+|a|²) f₀ + a) + α₂(√(1+|b|²) f₁ + b)` with `a ∈ R^k` on
/// `e_0..e_{k−1}` and `b ∈ R^{p−k}` on `e_k..e_{p−1}`.
pub fn split_product_point(p: usize, k: usize, u: &[f64]) -> DVector<f64> {
    let (a1, a2) = ((k as f64 / p as f64).sqrt(), ((p - k) as f64 / p as f64).sqrt());
    let mut x = DVector::zeros(p + 2);
    let na: f64 = u[..k].iter().map(|t| t * t).sum();
    let nb: f64 = u[k..].iter().map(|t| t * t).sum();
    for i in 0..p {
        x[i] = if i < k { a1 * u[i] } else { a2 * u[i] };
    }
    x[p] = a1 * (1.0 + na).sqrt();
    x[p + 1] = a2 * (1.0 + nb).sqrt();
    x
}

/// Shape operator eigenvalues of a hypersurface chart (`q = 1`) at `u`,
/// from central differences of the chart and a Q-orthonormal tangent frame.
pub fn hypersurface_shape_spectrum(p: usize, chart: impl Fn(&[f64]) -> DVector<f64>, u: &[f64], h: f64) -> Vec<f64> {
    let x = chart(u);
    let at = |moves: &[(usize, f64)]| {
        let mut v = u.to_vec();
        for &(i, d) in moves {
            v[i] += d;
        }
        chart(&v)
    };
    let d1: Vec<DVector<f64>> = (0..p).map(|i| (at(&[(i, h)]) - at(&[(i, -h)])) / (2.0 * h)).collect();
    let d2 = |i: usize, j: usize| {
        if i == j {
            (at(&[(i, h)]) - &x * 2.0 + at(&[(i, -h)])) / (h * h)
        } else {
            (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)]) + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h)
        }
    };
    // unit timelike normal: project the last axis Q-orthogonally off span(x, ∂x)
    let n = p + 2;
    let span: Vec<&DVector<f64>> = std::iter::once(&x).chain(d1.iter()).collect();
    let gram = DMatrix::from_fn(span.len(), span.len(), |i, j| q_dot(p, span[i], span[j]));
    let mut normal = DVector::zeros(n);
    normal[n - 1] = 1.0;
    let rhs = DVector::from_iterator(span.len(), span.iter().map(|v| q_dot(p, v, &normal)));
    let coef = gram.lu().solve(&rhs).unwrap();
    for (c, v) in coef.iter().zip(&span) {
        normal.axpy(-c, v, 1.0);
    }
    let nn = -q_dot(p, &normal, &normal);
    normal /= nn.sqrt();
    let g = DMatrix::from_fn(p, p, |i, j| q_dot(p, &d1[i], &d1[j]));
    let hc = DMatrix::from_fn(p, p, |i, j| -q_dot(p, &d2(i, j), &normal));
    // shape operator g⁻¹h, symmetric in an orthonormal frame
    let l = g.cholesky().unwrap().l();
    let li = l.try_inverse().unwrap();
    let s = &li * hc * li.transpose();
    let mut ev: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
