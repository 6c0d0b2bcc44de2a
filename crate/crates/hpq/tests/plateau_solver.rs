use hpq::immersion::JetMode;
use hpq::plateau::{
    estimate_h, radius_spread, radius_study, relax, seed_mesh, solve, Boundary, Mesh, SolverConfig,
};
use hpq::products::{pseudoflat_chart, PseudoFlatSpec};
use hpq::spaceform::{Polyhedron, Quadric, QuadricPoint};
use nalgebra::DVector;

fn polyhedron() -> Boundary {
    Boundary::polyhedron(&Polyhedron::new(2, 1).unwrap()).unwrap()
}

/// Circle of radius `r` about the origin in the totally geodesic plane of the
/// first two axes, `4(n−1)` points.
fn geodesic_circle(n: usize, r: f64) -> Boundary {
    let quadric = Quadric::new(2, 1).unwrap();
    let o = quadric.origin();
    let m = 4 * (n - 1);
    let points = (0..m)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / m as f64 - 0.75 * std::f64::consts::PI;
            let dir = DVector::from_vec(vec![t.cos(), t.sin(), 0.0, 0.0]);
            quadric.geodesic(&o, &dir, r).unwrap()
        })
        .collect::<Vec<QuadricPoint>>();
    Boundary::Loop { p: 2, q: 1, points }
}

#[test]
fn totally_geodesic_boundary_fills_with_the_plane() {
    let cfg = SolverConfig { resolution: 17, ..SolverConfig::default() };
    let res = solve(&geodesic_circle(17, 2.0), &cfg).unwrap();
    assert!(res.residual_h < cfg.tol_h);
    let s = res.summary;
    assert!(s.count > 0);
    assert!((s.min_scal + 2.0).abs() < 1e-2 && (s.max_scal + 2.0).abs() < 1e-2, "{s:?}");
    assert!(s.max_ii_norm_sq < 1e-2);
}

#[test]
fn polyhedron_flow_is_monotone_and_keeps_its_invariants() {
    let cfg = SolverConfig { resolution: 21, ..SolverConfig::default() };
    let seed = seed_mesh(&polyhedron(), &cfg).unwrap();
    let res = solve(&polyhedron(), &cfg).unwrap();
    assert!(res.residual_h < cfg.tol_h);
    assert!(res.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", res.history);
    let quadric = Quadric::new(2, 1).unwrap();
    assert!(res.mesh.quadric_drift(&quadric) < 1e-10);
    for v in (0..seed.len()).filter(|&v| seed.boundary_mask[v]) {
        assert_eq!(seed.vertices[v], res.mesh.vertices[v]);
    }
    let core = res.core;
    assert!(core.max_scal.abs() < 1e-2 && core.min_scal.abs() < 1e-2, "{core:?}");
    assert!((core.max_ii_norm_sq - 2.0).abs() < 5e-2 && (core.min_ii_norm_sq - 2.0).abs() < 5e-2);
}

#[test]
fn barbot_seed_converges_at_once() {
    let spec = PseudoFlatSpec::maximal(2, 1).unwrap();
    let chart = pseudoflat_chart(&spec, 5.0, JetMode::ClosedForm).unwrap();
    let mesh = Mesh::sample_chart(&chart, &[0.0, 0.0], 0.1, 15).unwrap();
    let centre = mesh.vertices[7 * 15 + 7].0.clone();
    let res = relax(mesh, centre, &SolverConfig::default()).unwrap();
    assert!(res.iterations <= 5 && res.residual_h < 1e-3);
}

#[test]
fn tilted_pseudoflat_mean_curvature_estimate() {
    let theta: f64 = 0.3;
    let spec = PseudoFlatSpec { p: 2, q: 2, mu: vec![1.0], theta };
    let chart = pseudoflat_chart(&spec, 5.0, JetMode::ClosedForm).unwrap();
    let mesh = Mesh::sample_chart(&chart, &[0.2, -0.1], 0.05 * 2f64.sqrt(), 7).unwrap();
    let fit = estimate_h(&mesh, 24, 2).unwrap();
    let exact = 2.0 * theta.tan();
    assert!((fit.mean_curvature_norm() - exact).abs() < 0.02 * exact, "{} vs {exact}", fit.mean_curvature_norm());
}

#[test]
fn truncation_radius_barely_moves_the_core() {
    let cfg = SolverConfig::default();
    let rows = radius_study(&polyhedron(), &cfg, &[2.0, 3.0, 4.0]).unwrap();
    for r in &rows {
        assert!(r.core.count > 0 && r.residual_h < cfg.tol_h);
    }
    assert!(radius_spread(&rows) < 1e-2, "{rows:?}");
}
