mod common;

use hpq::bochner::{bochner_terms, maximum_principle_inequality};
use hpq::immersion::{GraphChart, JetMode, ParamBox};
use hpq::products::{balanced_partition, product_chart, pseudoflat_chart, ProductSpec, PseudoFlatSpec};

/// Six-term table of a maximal product from factor curvatures alone:
/// `sec = −1/α_i²` inside factor `i`, zero across, Ricci `−(n_i−1)/α_i²`.
fn product_table(n: &[usize]) -> [f64; 6] {
    let alpha = common::maximal_alpha(n);
    let p: usize = n.iter().sum();
    let mut sec_sq = 0.0;
    let mut ric_sq = 0.0;
    for (&k, a) in n.iter().zip(&alpha) {
        let s = -1.0 / (a * a);
        sec_sq += (k * k.saturating_sub(1)) as f64 * s * s;
        ric_sq += k as f64 * ((k as f64 - 1.0) * s).powi(2);
    }
    let scal = common::product_scal(n, &alpha);
    [0.0, 0.0, sec_sq, p as f64 * scal, ric_sq, 0.0]
}

#[test]
fn reference_tables() {
    assert_eq!(product_table(&[3]), [0.0, 0.0, 6.0, -18.0, 12.0, 0.0]);
    let t = product_table(&[2, 1]);
    for (x, y) in t.iter().zip([0.0, 0.0, 4.5, -9.0, 4.5, 0.0]) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(t.iter().sum::<f64>().abs() < 1e-12);
}

#[test]
fn closed_form_products_close_the_identity() {
    for p in 2..=4 {
        for q in 1..=3 {
            for k in 1..=p.min(q + 1) {
                let n = balanced_partition(p, k);
                let chart = product_chart(&ProductSpec::maximal(n.clone()).unwrap(), q, 1.0, JetMode::ClosedForm).unwrap();
                let table = product_table(&n);
                for u in [vec![0.0; p], (0..p).map(|i| 0.3 - 0.2 * i as f64).collect()] {
                    let r = bochner_terms(&chart, &u, -1.0).unwrap();
                    assert!(r.identity_asserted);
                    assert!(r.residual < 1e-5, "n={n:?} q={q}: {}", r.residual);
                    for (x, y) in r.terms().iter().zip(&table) {
                        assert!((x - y).abs() < 1e-8, "n={n:?}: {:?} vs {table:?}", r.terms());
                    }
                    assert!(r.rhs_total.abs() < 1e-8);
                    assert!(maximum_principle_inequality(&r, p) >= -1e-4);
                }
            }
        }
    }
}

#[test]
fn constant_curvature_factor_has_no_offdiagonal_term() {
    for p in 2..=4 {
        let chart = GraphChart::totally_geodesic(p, 1).chart(ParamBox::cube(p, 0.5), JetMode::ClosedForm).unwrap();
        let r = bochner_terms(&chart, &vec![0.1; p], -1.0).unwrap();
        assert!(r.r_offdiag_sq.abs() < 1e-10, "{r:?}");
        assert!(r.residual < 1e-5);
    }
}

#[test]
fn pseudoflats_close_the_identity() {
    for (p, q) in [(2, 1), (2, 2), (3, 2), (3, 3)] {
        let spec = PseudoFlatSpec::maximal(p, q).unwrap();
        let chart = pseudoflat_chart(&spec, 1.0, JetMode::ClosedForm).unwrap();
        let r = bochner_terms(&chart, &vec![0.2; p], -1.0).unwrap();
        assert!(r.identity_asserted && r.residual < 1e-5, "{r:?}");
        assert!(maximum_principle_inequality(&r, p) >= -1e-4);
    }
}

#[test]
fn differenced_jets_close_with_second_order_decay() {
    let spec = ProductSpec::maximal(vec![2, 1]).unwrap();
    let exact = product_chart(&spec, 1, 1.0, JetMode::ClosedForm).unwrap();
    let u = [0.1, -0.2, 0.15];
    let residual = |h: f64| bochner_terms(&exact.with_mode(JetMode::FiniteDifference { h }), &u, -1.0).unwrap().residual;
    let (coarse, fine) = (residual(1e-2), residual(5e-3));
    assert!(coarse < 1e-3 && fine < 1e-3, "{coarse:e} {fine:e}");
    assert!(residual(1e-4) < 1e-3);
    assert!(coarse / fine > 3.0, "{coarse:e} -> {fine:e}");
}
