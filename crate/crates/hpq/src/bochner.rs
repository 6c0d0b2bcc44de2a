//! Term-by-term evaluation of the refined Bochner identity for maximal
//! spacelike submanifolds,
//! `½Δ‖II‖² = ‖∇II‖² + Σ_{α<β}‖[H^α,H^β]‖² + Σ_{i≠j} sec² − c·p·Scal + Σ Ric(e_i,e_i)² + ½Σ' R²`,
//! against a finite-difference Laplacian of `‖II‖²`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::curvature::{curvature_from_ii, gauss_tensor, MAXIMAL_TOL_EXACT};
use crate::immersion::{christoffel, covariant_derivative_in_frame, fundamental_data, ImmersionChart, ImmersionError, JetMode};

/// Step of the normal-coordinate Laplacian stencil for exact-jet charts.
pub const LAPLACIAN_STEP_EXACT: f64 = 1e-3;
/// Same for differenced jets, where `‖II‖²` carries ~1e-8 noise.
pub const LAPLACIAN_STEP_FD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BochnerReport {
    pub grad_ii_sq: f64,
    pub comm_sq: f64,
    pub sec_sq: f64,
    pub scal_term: f64,
    pub ric_sq: f64,
    pub r_offdiag_sq: f64,
    pub rhs_total: f64,
    pub lhs_fd: f64,
    pub residual: f64,
    /// False when the chart is not maximal at the point; the identity then need not hold.
    pub identity_asserted: bool,
    pub scal: f64,
    pub mean_curvature_norm: f64,
}

impl BochnerReport {
    pub fn terms(&self) -> [f64; 6] {
        [self.grad_ii_sq, self.comm_sq, self.sec_sq, self.scal_term, self.ric_sq, self.r_offdiag_sq]
    }
}

/// The five curvature terms `(comm, sec², −c·p·Scal, ΣRic², ½Σ'R²)` from a
/// second fundamental form given in a Ricci-diagonalizing tangent frame.
pub fn algebraic_terms(h: &[DMatrix<f64>], p: usize, c: f64) -> [f64; 5] {
    let r = gauss_tensor(h, p, c);
    let at = |k: usize, i: usize, j: usize, l: usize| r[((k * p + i) * p + j) * p + l];
    let mut comm = 0.0;
    for a in 0..h.len() {
        for b in (a + 1)..h.len() {
            comm += (&h[a] * &h[b] - &h[b] * &h[a]).norm_squared();
        }
    }
    let mut sec_sq = 0.0;
    let mut ric_sq = 0.0;
    let mut scal = 0.0;
    for i in 0..p {
        let mut ric = 0.0;
        for j in 0..p {
            ric += at(i, j, j, i);
            if i != j {
                sec_sq += at(i, j, j, i).powi(2);
            }
        }
        ric_sq += ric * ric;
        scal += ric;
    }
    let mut off = 0.0;
    for k in 0..p {
        for i in 0..p {
            for j in 0..p {
                for l in 0..p {
                    if !((i == j && k == l) || (k == j && i == l)) {
                        off += at(k, i, j, l).powi(2);
                    }
                }
            }
        }
    }
    [comm, sec_sq, -c * p as f64 * scal, ric_sq, 0.5 * off]
}

fn laplacian_step(chart: &ImmersionChart) -> f64 {
    match chart.jet_mode() {
        JetMode::ClosedForm => LAPLACIAN_STEP_EXACT,
        JetMode::FiniteDifference { .. } => LAPLACIAN_STEP_FD,
    }
}

/// `Δf` at `u` from three-point second differences along the geodesics of an
/// orthonormal frame, `u(s) = u + E s − ½ Γ(Es, Es)`.
pub fn normal_coordinate_laplacian<F>(chart: &ImmersionChart, u: &[f64], step: f64, f: F) -> Result<f64, ImmersionError>
where
    F: Fn(&[f64]) -> Result<f64, ImmersionError>,
{
    let p = chart.p();
    let fd = fundamental_data(chart, u)?;
    let jet = chart.jet(u, 2)?;
    let quadric = chart.quadric();
    let dg: Vec<DMatrix<f64>> = (0..p)
        .map(|k| {
            DMatrix::from_fn(p, p, |i, j| quadric.dot(&jet.d2[i][k], &jet.d1[j]) + quadric.dot(&jet.d1[i], &jet.d2[j][k]))
        })
        .collect();
    let ginv = fd.metric.clone().try_inverse().expect("checked metric");
    let gamma = christoffel(&ginv, &dg);
    let e = &fd.coord_to_frame;
    let reach = (0..p).map(|a| e.column(a).amax()).fold(0.0, f64::max) * step * 1.5;
    if !chart.domain().contains(u, reach) {
        return Err(ImmersionError::StencilExitsDomain { u: u.to_vec(), width: reach });
    }
    let f0 = f(u)?;
    let mut lap = 0.0;
    for a in 0..p {
        let col = e.column(a);
        let curve = |t: f64| -> Vec<f64> {
            (0..p)
                .map(|m| {
                    let quad: f64 = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| gamma[m][(i, j)] * col[i] * col[j]).sum();
                    u[m] + t * col[m] - 0.5 * t * t * quad
                })
                .collect()
        };
        lap += (f(&curve(step))? - 2.0 * f0 + f(&curve(-step))?) / (step * step);
    }
    Ok(lap)
}

/// All six right-hand terms at `u` plus the finite-difference left-hand side.
pub fn bochner_terms(chart: &ImmersionChart, u: &[f64], c: f64) -> Result<BochnerReport, ImmersionError> {
    let fd = fundamental_data(chart, u)?;
    let p = fd.p;
    let report = curvature_from_ii(&fd, c);
    let eig = report.ric.clone().symmetric_eigen();
    let fd_ric = fd.reframed(&eig.eigenvectors, &DMatrix::identity(fd.q, fd.q));
    let [comm_sq, sec_sq, scal_term, ric_sq, r_offdiag_sq] = algebraic_terms(&fd_ric.h, p, c);
    let grad_ii_sq = covariant_derivative_in_frame(chart, u, &fd)?.norm_sq();
    let rhs_total = grad_ii_sq + comm_sq + sec_sq + scal_term + ric_sq + r_offdiag_sq;
    let lhs_fd = 0.5
        * normal_coordinate_laplacian(chart, u, laplacian_step(chart), |v| Ok(fundamental_data(chart, v)?.ii_norm_sq()))?;
    let h = fd.mean_curvature_norm_sq().sqrt();
    Ok(BochnerReport {
        grad_ii_sq,
        comm_sq,
        sec_sq,
        scal_term,
        ric_sq,
        r_offdiag_sq,
        rhs_total,
        lhs_fd,
        residual: (rhs_total - lhs_fd).abs(),
        identity_asserted: h < MAXIMAL_TOL_EXACT,
        scal: report.scal,
        mean_curvature_norm: h,
    })
}

/// `ΔScal − 2p·Scal` with `ΔScal = 2·lhs_fd`, valid for maximal charts in `H^{p,q}`.
pub fn maximum_principle_inequality(report: &BochnerReport, p: usize) -> f64 {
    2.0 * report.lhs_fd - 2.0 * p as f64 * report.scal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::immersion::{GraphChart, ParamBox};
    use crate::products::{product_chart, pseudoflat_chart, ProductSpec, PseudoFlatSpec};

    fn close(a: [f64; 6], b: [f64; 6], tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn totally_geodesic_table() {
        let chart = GraphChart::totally_geodesic(3, 1).chart(ParamBox::cube(3, 1.0), JetMode::ClosedForm).unwrap();
        let r = bochner_terms(&chart, &[0.1, 0.2, -0.3], -1.0).unwrap();
        assert!(close(r.terms(), [0.0, 0.0, 6.0, -18.0, 12.0, 0.0], 1e-9), "{r:?}");
        assert!(r.residual < 1e-5 && r.identity_asserted);
        assert!((maximum_principle_inequality(&r, 3) - 36.0).abs() < 1e-6);
    }

    #[test]
    fn split_product_table() {
        let spec = ProductSpec::maximal(vec![2, 1]).unwrap();
        let chart = product_chart(&spec, 1, 1.0, JetMode::ClosedForm).unwrap();
        let r = bochner_terms(&chart, &[0.2, -0.1, 0.3], -1.0).unwrap();
        assert!(close(r.terms(), [0.0, 0.0, 4.5, -9.0, 4.5, 0.0], 1e-6), "{r:?}");
        assert!(r.rhs_total.abs() < 1e-6 && r.residual < 1e-5);
    }

    #[test]
    fn pseudoflat_terms_vanish() {
        let chart = pseudoflat_chart(&PseudoFlatSpec::maximal(3, 2).unwrap(), 1.0, JetMode::ClosedForm).unwrap();
        let r = bochner_terms(&chart, &[0.1, 0.0, -0.2], -1.0).unwrap();
        assert!(close(r.terms(), [0.0; 6], 1e-6), "{r:?}");
        assert!(r.residual < 1e-5);
        assert!(maximum_principle_inequality(&r, 3).abs() < 1e-4);
    }

    #[test]
    fn laplacian_matches_coordinate_formula() {
        // Δf = g^{ij}(∂_ij f − Γ^k_ij ∂_k f) with f = ‖II‖², both by differences
        let chart = GraphChart::random(2, 1, 3, 0.3).chart(ParamBox::cube(2, 0.5), JetMode::ClosedForm).unwrap();
        let u = [0.05, -0.1];
        let f = |v: &[f64]| fundamental_data(&chart, v).unwrap().ii_norm_sq();
        let h = 1e-3;
        let shift = |i: usize, a: f64, j: usize, b: f64| {
            let mut v = u.to_vec();
            v[i] += a;
            v[j] += b;
            v
        };
        let grad: Vec<f64> = (0..2).map(|i| (f(&shift(i, h, i, 0.0)) - f(&shift(i, -h, i, 0.0))) / (2.0 * h)).collect();
        let hess = DMatrix::from_fn(2, 2, |i, j| {
            (f(&shift(i, h, j, h)) - f(&shift(i, h, j, -h)) - f(&shift(i, -h, j, h)) + f(&shift(i, -h, j, -h))) / (4.0 * h * h)
        });
        let hess = DMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                (f(&shift(i, h, i, 0.0)) - 2.0 * f(&u) + f(&shift(i, -h, i, 0.0))) / (h * h)
            } else {
                hess[(i, j)]
            }
        });
        let jet = chart.jet(&u, 2).unwrap();
        let q = chart.quadric();
        let g = jet.metric(q);
        let dg: Vec<DMatrix<f64>> = (0..2)
            .map(|k| DMatrix::from_fn(2, 2, |i, j| q.dot(&jet.d2[i][k], &jet.d1[j]) + q.dot(&jet.d1[i], &jet.d2[j][k])))
            .collect();
        let ginv = g.try_inverse().unwrap();
        let gamma = christoffel(&ginv, &dg);
        let mut expect = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let corr: f64 = (0..2).map(|k| gamma[k][(i, j)] * grad[k]).sum();
                expect += ginv[(i, j)] * (hess[(i, j)] - corr);
            }
        }
        let lap = normal_coordinate_laplacian(&chart, &u, 1e-3, |v| Ok(f(v))).unwrap();
        assert!((lap - expect).abs() < 1e-5 * (1.0 + expect.abs()), "{lap} {expect}");
    }

    #[test]
    fn non_maximal_chart_not_asserted() {
        let spec = ProductSpec::new(vec![1, 1], vec![0.8, 0.6]).unwrap();
        let chart = product_chart(&spec, 1, 1.0, JetMode::ClosedForm).unwrap();
        let r = bochner_terms(&chart, &[0.0, 0.0], -1.0).unwrap();
        assert!(!r.identity_asserted);
        assert!(r.terms().iter().all(|x| x.is_finite()));
    }
}
