mod common;

use approx::assert_abs_diff_eq;
use hpq::curvature::{curvature_from_ii, fundamental_residuals};
use hpq::immersion::{covariant_derivative_ii, fundamental_data, FundamentalData, GraphChart, GraphTerm, JetMode, ParamBox};
use hpq::products::{balanced_partition, product_chart, pseudoflat_chart, ProductSpec, PseudoFlatSpec};
use hpq::spaceform::Lcg;
use nalgebra::{DMatrix, DVector};

fn data_from_h(h: Vec<DMatrix<f64>>) -> FundamentalData {
    let p = h[0].nrows();
    let q = h.len();
    FundamentalData {
        p,
        q,
        position: DVector::zeros(p + q + 1),
        frame: vec![DVector::zeros(p + q + 1); p + q],
        coord_to_frame: DMatrix::identity(p, p),
        metric: DMatrix::identity(p, p),
        h,
        mean_curvature: DVector::zeros(p + q + 1),
    }
}

#[test]
fn gauss_contractions_match_brute_force() {
    let mut rng = Lcg::new(41);
    let mut normal = || rng.normal();
    for p in 2..=4 {
        for q in 1..=3 {
            let h: Vec<_> = (0..q).map(|_| common::random_symmetric(p, &mut normal)).collect();
            let report = curvature_from_ii(&data_from_h(h.clone()), -1.0);
            for i in 0..p {
                for j in 0..p {
                    if i != j {
                        assert_abs_diff_eq!(report.sec[(i, j)], common::sectional(&h, -1.0, i, j), epsilon = 1e-12);
                    }
                }
            }
            let ric = common::ricci(&h, -1.0);
            assert!((&report.ric - &ric).amax() < 1e-12);
            assert_abs_diff_eq!(report.scal, common::scalar(&h, -1.0), epsilon = 1e-11);
            assert!(report.trace_residual < 1e-12);
            assert!(report.symmetry_defect() < 1e-12);
        }
    }
}

#[test]
fn trace_identity_on_random_charts() {
    for (p, q) in [(2, 1), (2, 2), (3, 1), (3, 2)] {
        for seed in 0..5 {
            let chart = GraphChart::random(p, q, 100 + seed, 0.3).chart(ParamBox::cube(p, 0.5), JetMode::ClosedForm).unwrap();
            let r = fundamental_residuals(&chart, &vec![0.1; p]).unwrap();
            assert!(r.trace < 1e-7 && r.gauss < 1e-6 && r.codazzi < 1e-6 && r.ricci < 1e-6, "{r:?}");
        }
    }
}

#[test]
fn product_invariants_match_factor_sums() {
    for p in 2..=5 {
        for q in 1..=4 {
            for k in 1..=p.min(q + 1) {
                let n = balanced_partition(p, k);
                let alpha = common::maximal_alpha(&n);
                let spec = ProductSpec::maximal(n.clone()).unwrap();
                let chart = product_chart(&spec, q, 1.0, JetMode::ClosedForm).unwrap();
                let u: Vec<f64> = (0..p).map(|i| 0.1 * i as f64 - 0.15).collect();
                let fd = fundamental_data(&chart, &u).unwrap();
                let report = curvature_from_ii(&fd, -1.0);
                assert_abs_diff_eq!(report.scal, common::product_scal(&n, &alpha), epsilon = 1e-8);
                assert_abs_diff_eq!(fd.ii_norm_sq(), common::product_ii_norm_sq(&n, &alpha), epsilon = 1e-8);
                // maximal radii give Scal = −p(p−k), ‖II‖² = p(k−1)
                assert_abs_diff_eq!(report.scal, -((p * (p - k)) as f64), epsilon = 1e-8);
                assert_abs_diff_eq!(fd.ii_norm_sq(), (p * (k - 1)) as f64, epsilon = 1e-8);
                assert!(fd.mean_curvature_norm_sq().sqrt() < 1e-8);
            }
        }
    }
}

#[test]
fn non_maximal_product_matches_factor_sums() {
    let n = vec![2, 1];
    let alpha = vec![0.6, 0.8];
    let spec = ProductSpec::new(n.clone(), alpha.clone()).unwrap();
    let chart = product_chart(&spec, 1, 1.0, JetMode::ClosedForm).unwrap();
    let fd = fundamental_data(&chart, &[0.2, -0.1, 0.3]).unwrap();
    let report = curvature_from_ii(&fd, -1.0);
    assert_abs_diff_eq!(report.scal, common::product_scal(&n, &alpha), epsilon = 1e-8);
    assert_abs_diff_eq!(fd.ii_norm_sq(), common::product_ii_norm_sq(&n, &alpha), epsilon = 1e-8);
    // ‖H‖² = Σ_i (n_i/α_i − pα_i)² · (−Q(x_i, x_i)) with unit factor points
    let h: f64 = n.iter().zip(&alpha).map(|(&k, a)| (k as f64 / a - 3.0 * a).powi(2)).sum();
    assert_abs_diff_eq!(fd.mean_curvature_norm_sq(), h, epsilon = 1e-8);
}

#[test]
fn split_product_shape_spectrum() {
    for p in 3..=5 {
        for k in 1..p {
            let (a, b) = (((p - k) as f64 / k as f64).sqrt(), -(k as f64 / (p - k) as f64).sqrt());
            let mut expected: Vec<f64> = std::iter::repeat(a).take(k).chain(std::iter::repeat(b).take(p - k)).collect();
            expected.sort_by(|x, y| y.partial_cmp(x).unwrap());
            let flipped: Vec<f64> = expected.iter().rev().map(|x| -x).collect();
            let u: Vec<f64> = (0..p).map(|i| 0.05 * (i as f64 + 1.0)).collect();
            let oracle = common::hypersurface_shape_spectrum(p, |v| common::split_product_point(p, k, v), &u, 1e-4);
            let d = common::max_abs_diff(&oracle, &expected).min(common::max_abs_diff(&oracle, &flipped));
            assert!(d < 1e-5, "oracle {oracle:?} vs {expected:?}");

            let spec = ProductSpec::maximal(vec![k, p - k]).unwrap();
            let chart = product_chart(&spec, 1, 1.0, JetMode::ClosedForm).unwrap();
            let fd = fundamental_data(&chart, &u).unwrap();
            let mut ev: Vec<f64> = fd.shape_ops()[0].clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
            let d = common::max_abs_diff(&ev, &expected).min(common::max_abs_diff(&ev, &flipped));
            assert!(d < 1e-9, "{ev:?} vs {expected:?}");
        }
    }
}

/// For the graph `φ = ε·P(u)` over the totally geodesic chart, at `u = 0`
/// the coordinate frame is orthonormal, the Christoffel symbols vanish and
/// `∇_k h_ij = ε ∂_k∂_i∂_j P + O(ε²)`.
#[test]
fn covariant_derivative_matches_linearized_graph() {
    let eps = 1e-4;
    // P = u0²u1 + 2 u1³
    let terms = vec![
        GraphTerm::Monomial { normal: 0, coeff: eps, powers: vec![2, 1] },
        GraphTerm::Monomial { normal: 0, coeff: 2.0 * eps, powers: vec![0, 3] },
    ];
    let chart = GraphChart { p: 2, q: 1, terms }.chart(ParamBox::cube(2, 0.5), JetMode::ClosedForm).unwrap();
    let nabla = covariant_derivative_ii(&chart, &[0.0, 0.0]).unwrap();
    let fd = fundamental_data(&chart, &[0.0, 0.0]).unwrap();
    let third = |k: usize, i: usize, j: usize| {
        let mut pw = [0usize; 2];
        for m in [k, i, j] {
            pw[m] += 1;
        }
        eps * match pw {
            [2, 1] => 2.0,
            [0, 3] => 12.0,
            _ => 0.0,
        }
    };
    // rotate the exact coordinate tensor into the library's frame
    let e = &fd.coord_to_frame;
    let mut sign_fit: Option<f64> = None;
    for c in 0..2 {
        for a in 0..2 {
            for d in 0..2 {
                let mut exact = 0.0;
                for k in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            exact += e[(k, c)] * e[(i, a)] * e[(j, d)] * third(k, i, j);
                        }
                    }
                }
                let got = nabla.get(0, c, a, d);
                if exact.abs() > 1e-5 {
                    let s = (got / exact).signum();
                    assert!(sign_fit.map_or(true, |t| t == s));
                    sign_fit = Some(s);
                }
                assert!((got.abs() - exact.abs()).abs() < 1e-7, "{got} vs {exact}");
            }
        }
    }
}

#[test]
fn pseudoflat_mean_curvature_norm() {
    for theta in [0.0, 0.1, 0.3, 0.7] {
        for (p, q, mu) in [(2, 2, vec![1.0]), (2, 3, vec![0.6, 0.8]), (3, 3, vec![1.0])] {
            let spec = PseudoFlatSpec { p, q, mu, theta };
            let chart = pseudoflat_chart(&spec, 1.0, JetMode::ClosedForm).unwrap();
            for u in [vec![0.0; p], (0..p).map(|i| 0.2 - 0.15 * i as f64).collect()] {
                let fd = fundamental_data(&chart, &u).unwrap();
                let report = curvature_from_ii(&fd, -1.0);
                assert_abs_diff_eq!(fd.mean_curvature_norm_sq().sqrt(), p as f64 * theta.tan(), epsilon = 1e-8);
                assert!(report.sec.amax() < 1e-8);
                assert_abs_diff_eq!(report.scal, 0.0, epsilon = 1e-8);
            }
        }
    }
}
