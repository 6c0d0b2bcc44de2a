//! Intrinsic curvature from fundamental data, and residuals of the Gauss,
//! Codazzi and Ricci equations.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::immersion::{
    covariant_derivative_in_frame, fundamental_data, normal_curvature, FundamentalData, ImmersionChart,
    ImmersionError, JetMode, PointJet,
};
use crate::spaceform::Quadric;

/// Maximality tolerance on `‖H‖` for closed-form charts.
pub const MAXIMAL_TOL_EXACT: f64 = 1e-5;
/// Maximality tolerance on `‖H‖` for solver output.
pub const MAXIMAL_TOL_SOLVER: f64 = 1e-2;
/// Step of the stencil differencing the metric derivatives, exact-jet charts.
pub const INTRINSIC_STEP_EXACT: f64 = 1e-3;
/// Same for charts with differenced jets.
pub const INTRINSIC_STEP_FD: f64 = 5e-3;

pub(crate) fn rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let v: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    v.serialize(s)
}

/// Curvature of the induced metric in the tangent frame of the fundamental data.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    pub p: usize,
    pub c: f64,
    /// `⟨R_{e_k,e_i} e_j, e_l⟩` indexed `[k][i][j][l]`, flattened.
    pub riemann: Vec<f64>,
    #[serde(serialize_with = "rows")]
    pub sec: DMatrix<f64>,
    #[serde(serialize_with = "rows")]
    pub ric: DMatrix<f64>,
    /// Descending.
    pub ric_eigenvalues: Vec<f64>,
    pub scal: f64,
    pub trace_residual: f64,
    /// Filled by [`curvature_at`], which has the chart needed for the intrinsic route.
    pub gauss_residual: Option<f64>,
}

impl CurvatureReport {
    pub fn r(&self, k: usize, i: usize, j: usize, l: usize) -> f64 {
        let p = self.p;
        self.riemann[((k * p + i) * p + j) * p + l]
    }

    pub fn ric_max(&self) -> f64 {
        self.ric_eigenvalues[0]
    }

    /// Largest violation of antisymmetry, pair symmetry and the first Bianchi identity.
    pub fn symmetry_defect(&self) -> f64 {
        let p = self.p;
        let mut m: f64 = 0.0;
        for k in 0..p {
            for i in 0..p {
                for j in 0..p {
                    for l in 0..p {
                        let r = self.r(k, i, j, l);
                        m = m.max((r + self.r(i, k, j, l)).abs());
                        m = m.max((r + self.r(k, i, l, j)).abs());
                        m = m.max((r - self.r(j, l, k, i)).abs());
                        m = m.max((r + self.r(i, j, k, l) + self.r(j, k, i, l)).abs());
                    }
                }
            }
        }
        m
    }
}

/// `R_{kijl}` of a space form of curvature `c` plus the second fundamental form `h`.
pub fn gauss_tensor(h: &[DMatrix<f64>], p: usize, c: f64) -> Vec<f64> {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut r = vec![0.0; p * p * p * p];
    for k in 0..p {
        for i in 0..p {
            for j in 0..p {
                for l in 0..p {
                    let mut v = c * (d(i, j) * d(k, l) - d(k, j) * d(i, l));
                    for m in h {
                        v += m[(k, j)] * m[(i, l)] - m[(i, j)] * m[(k, l)];
                    }
                    r[((k * p + i) * p + j) * p + l] = v;
                }
            }
        }
    }
    r
}

/// Contractions of a curvature tensor: sectional curvatures, Ricci, scalar.
pub fn contractions(riemann: &[f64], p: usize) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let r = |k: usize, i: usize, j: usize, l: usize| riemann[((k * p + i) * p + j) * p + l];
    let sec = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { r(i, j, j, i) });
    let mut ric = DMatrix::from_fn(p, p, |a, b| (0..p).map(|j| r(a, j, j, b)).sum());
    ric = (&ric + ric.transpose()) * 0.5;
    let scal = ric.trace();
    (sec, ric, scal)
}

pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

/// Curvature from the Gauss equation in the frame of `fd`.
pub fn curvature_from_ii(fd: &FundamentalData, c: f64) -> CurvatureReport {
    let p = fd.p;
    let riemann = gauss_tensor(&fd.h, p, c);
    let (sec, ric, scal) = contractions(&riemann, p);
    let ric_eigenvalues = sorted_eigenvalues(&ric);
    let mut report =
        CurvatureReport { p, c, riemann, sec, ric, ric_eigenvalues, scal, trace_residual: 0.0, gauss_residual: None };
    report.trace_residual = trace_identity_residual(fd, &report);
    report
}

/// `|Scal − c·p(p−1) + ‖H‖² − ‖II‖²|`.
pub fn trace_identity_residual(fd: &FundamentalData, report: &CurvatureReport) -> f64 {
    let p = fd.p as f64;
    (report.scal - report.c * p * (p - 1.0) + fd.mean_curvature_norm_sq() - fd.ii_norm_sq()).abs()
}

/// Signed distances to the sharp bounds for maximal submanifolds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    /// `p·min{0, q−p+1} − Scal`
    pub scal_margin: f64,
    /// `p·min{p−1, q} − ‖II‖²`
    pub ii_margin: f64,
    pub ric_max: f64,
    pub mean_curvature_norm: f64,
    /// Set when `‖H‖` exceeds the maximality tolerance; the bounds then need not hold.
    pub not_maximal: bool,
}

pub fn scal_bound(p: usize, q: usize) -> f64 {
    let (p, q) = (p as f64, q as f64);
    p * (q - p + 1.0).min(0.0)
}

pub fn ii_bound(p: usize, q: usize) -> f64 {
    (p * (p - 1).min(q)) as f64
}

pub fn bound_check(report: &CurvatureReport, fd: &FundamentalData, p: usize, q: usize, maximal_tol: f64) -> BoundCheck {
    let h = fd.mean_curvature_norm_sq().sqrt();
    BoundCheck {
        scal_margin: scal_bound(p, q) - report.scal,
        ii_margin: ii_bound(p, q) - fd.ii_norm_sq(),
        ric_max: report.ric_max(),
        mean_curvature_norm: h,
        not_maximal: h >= maximal_tol,
    }
}

fn intrinsic_step(chart: &ImmersionChart) -> f64 {
    match chart.jet_mode() {
        JetMode::ClosedForm => INTRINSIC_STEP_EXACT,
        JetMode::FiniteDifference { .. } => INTRINSIC_STEP_FD,
    }
}

/// `R_{kijl}` on coordinate vectors from the induced metric alone: `∂g` from
/// the tangent jet, `∂²g` by differencing it.
pub fn intrinsic_riemann(chart: &ImmersionChart, u: &[f64]) -> Result<Vec<f64>, ImmersionError> {
    let h = intrinsic_step(chart);
    if !chart.domain().contains(u, 4.0 * h) {
        return Err(ImmersionError::StencilExitsDomain { u: u.to_vec(), width: 4.0 * h });
    }
    // Richardson extrapolation of the second-order stencil
    let fine = riemann_with_step(chart, u, h)?;
    let coarse = riemann_with_step(chart, u, 2.0 * h)?;
    Ok(fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect())
}

fn riemann_with_step(chart: &ImmersionChart, u: &[f64], h: f64) -> Result<Vec<f64>, ImmersionError> {
    let p = chart.p();
    let quadric = chart.quadric();
    // metric and its first derivatives from the 2-jet
    let metric_at = |shift: Option<(usize, f64)>| -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), ImmersionError> {
        let mut v = u.to_vec();
        if let Some((i, d)) = shift {
            v[i] += d;
        }
        let jet = chart.jet(&v, 2)?;
        let dg = (0..p)
            .map(|k| {
                DMatrix::from_fn(p, p, |i, j| {
                    quadric.dot(&jet.d2[i][k], &jet.d1[j]) + quadric.dot(&jet.d1[i], &jet.d2[j][k])
                })
            })
            .collect();
        Ok((jet.metric(quadric), dg))
    };
    let (g, dg) = metric_at(None)?;
    let mut ddg = vec![vec![DMatrix::zeros(p, p); p]; p];
    for a in 0..p {
        let (_, plus) = metric_at(Some((a, h)))?;
        let (_, minus) = metric_at(Some((a, -h)))?;
        for b in 0..p {
            ddg[a][b] = (&plus[b] - &minus[b]) / (2.0 * h);
        }
    }
    for a in 0..p {
        for b in 0..a {
            let m = (&ddg[a][b] + &ddg[b][a]) * 0.5;
            ddg[a][b] = m.clone();
            ddg[b][a] = m;
        }
    }
    let ginv = g.clone().try_inverse().ok_or(ImmersionError::DegenerateMetric { min_eig: 0.0, cond: f64::INFINITY })?;
    let lower = |i: usize, j: usize, m: usize| 0.5 * (dg[i][(j, m)] + dg[j][(i, m)] - dg[m][(i, j)]);
    let dlower = |a: usize, i: usize, j: usize, m: usize| 0.5 * (ddg[a][i][(j, m)] + ddg[a][j][(i, m)] - ddg[a][m][(i, j)]);
    let gamma = |l: usize, i: usize, j: usize| (0..p).map(|m| ginv[(l, m)] * lower(i, j, m)).sum::<f64>();
    let dginv: Vec<DMatrix<f64>> = dg.iter().map(|d| -(&ginv * d * &ginv)).collect();
    let dgamma = |a: usize, l: usize, i: usize, j: usize| {
        (0..p).map(|m| dginv[a][(l, m)] * lower(i, j, m) + ginv[(l, m)] * dlower(a, i, j, m)).sum::<f64>()
    };
    let mut upper = vec![0.0; p * p * p * p];
    for k in 0..p {
        for i in 0..p {
            for j in 0..p {
                for l in 0..p {
                    let mut v = dgamma(k, l, i, j) - dgamma(i, l, k, j);
                    for m in 0..p {
                        v += gamma(m, i, j) * gamma(l, k, m) - gamma(m, k, j) * gamma(l, i, m);
                    }
                    upper[((k * p + i) * p + j) * p + l] = v;
                }
            }
        }
    }
    let mut r = vec![0.0; p * p * p * p];
    for k in 0..p {
        for i in 0..p {
            for j in 0..p {
                for l in 0..p {
                    r[((k * p + i) * p + j) * p + l] =
                        (0..p).map(|n| g[(l, n)] * upper[((k * p + i) * p + j) * p + n]).sum();
                }
            }
        }
    }
    Ok(r)
}

/// Rewrites a 4-tensor on coordinate vectors in the tangent frame of `fd`.
pub fn to_frame(t: &[f64], fd: &FundamentalData) -> Vec<f64> {
    let p = fd.p;
    let e = &fd.coord_to_frame;
    let mut cur = t.to_vec();
    // contract one slot at a time; slot s has stride p^(3-s)
    for slot in 0..4 {
        let stride = p.pow(3 - slot as u32);
        let mut next = vec![0.0; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let a = (idx / stride) % p;
            let base = idx - a * stride;
            *out = (0..p).map(|i| e[(i, a)] * cur[base + i * stride]).sum();
        }
        cur = next;
    }
    cur
}

/// Normal projector `N = I − X g⁻¹ Xᵀ D + x xᵀ D` and its parameter derivatives.
fn normal_projector_with_derivatives(quadric: &Quadric, jet: &PointJet) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let n = quadric.dim();
    let p = jet.d1.len();
    let dmat = quadric.space().gram().clone();
    let x = DMatrix::from_columns(&jet.d1);
    let pos = DMatrix::from_column_slice(n, 1, jet.pos.as_slice());
    let g = x.transpose() * &dmat * &x;
    let ginv = g.try_inverse().expect("spacelike chart");
    let nproj = DMatrix::identity(n, n) - &x * &ginv * x.transpose() * &dmat + &pos * pos.transpose() * &dmat;
    let mut dn = Vec::with_capacity(p);
    for k in 0..p {
        let xk = DMatrix::from_columns(&(0..p).map(|i| jet.d2[i][k].clone()).collect::<Vec<_>>());
        let dgk = xk.transpose() * &dmat * &x + x.transpose() * &dmat * &xk;
        let dginv = -(&ginv * dgk * &ginv);
        let dpt = (&xk * &ginv * x.transpose() + &x * dginv * x.transpose() + &x * &ginv * xk.transpose()) * &dmat;
        let tk = DMatrix::from_column_slice(n, 1, jet.d1[k].as_slice());
        let dpx = (&tk * pos.transpose() + &pos * tk.transpose()) * &dmat;
        dn.push(-dpt + dpx);
    }
    (nproj, dn)
}

/// Normal curvature `g_N(R^N_{e_a,e_b} e_α, e_β)` from `N[∂_a N, ∂_b N]`,
/// indexed like [`crate::immersion::NormalCurvature`].
pub fn normal_curvature_from_projector(chart: &ImmersionChart, u: &[f64], fd: &FundamentalData) -> Result<Vec<f64>, ImmersionError> {
    let (p, q) = (fd.p, fd.q);
    let quadric = chart.quadric();
    let jet = chart.jet(u, 2)?;
    let (nproj, dn) = normal_projector_with_derivatives(quadric, &jet);
    let mut coord = vec![DMatrix::zeros(q, q); p * p];
    for k in 0..p {
        for l in 0..p {
            let rkl = &nproj * (&dn[k] * &dn[l] - &dn[l] * &dn[k]);
            let imgs: Vec<DVector<f64>> = fd.normals().iter().map(|e| &rkl * e).collect();
            coord[k * p + l] = DMatrix::from_fn(q, q, |a, b| quadric.dot(&imgs[a], fd.normal(b)));
        }
    }
    let e = &fd.coord_to_frame;
    let mut out = vec![0.0; p * p * q * q];
    for a in 0..p {
        for b in 0..p {
            for al in 0..q {
                for be in 0..q {
                    let mut s = 0.0;
                    for k in 0..p {
                        for l in 0..p {
                            s += e[(k, a)] * e[(l, b)] * coord[k * p + l][(al, be)];
                        }
                    }
                    out[((a * p + b) * q + al) * q + be] = s;
                }
            }
        }
    }
    Ok(out)
}

/// Gauss-equation curvature plus the intrinsic comparison.
pub fn curvature_at(chart: &ImmersionChart, u: &[f64], c: f64) -> Result<(FundamentalData, CurvatureReport), ImmersionError> {
    let fd = fundamental_data(chart, u)?;
    let mut report = curvature_from_ii(&fd, c);
    let intrinsic = to_frame(&intrinsic_riemann(chart, u)?, &fd);
    report.gauss_residual = Some(max_abs_diff(&intrinsic, &report.riemann));
    Ok((fd, report))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FundamentalResiduals {
    pub gauss: f64,
    pub codazzi: f64,
    pub ricci: f64,
    pub trace: f64,
}

/// Residuals of the three fundamental equations and the trace identity at `u`
/// in `H^{p,q}` (curvature −1).
pub fn fundamental_residuals(chart: &ImmersionChart, u: &[f64]) -> Result<FundamentalResiduals, ImmersionError> {
    let (fd, report) = curvature_at(chart, u, -1.0)?;
    let nabla = covariant_derivative_in_frame(chart, u, &fd)?;
    let from_shape = normal_curvature(&fd).components;
    let from_projector = normal_curvature_from_projector(chart, u, &fd)?;
    Ok(FundamentalResiduals {
        gauss: report.gauss_residual.unwrap_or(0.0),
        codazzi: nabla.codazzi_residual,
        ricci: max_abs_diff(&from_shape, &from_projector),
        trace: report.trace_residual,
    })
}
