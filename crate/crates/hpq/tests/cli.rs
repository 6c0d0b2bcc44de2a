use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn hpq(args: &[&str], out: &Path) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_hpq"))
        .args(args)
        .arg("--output")
        .arg(out)
        .status()
        .expect("binary runs");
    status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fundamental_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(hpq(&["verify", "--suite", "fundamental", "--p", "2", "--q", "2", "--seed", "7"], &out), 0);
    let r = json(&out);
    assert_eq!(r["command"], "verify");
    assert!(r["failures"].as_array().unwrap().is_empty());
    for row in r["results"].as_array().unwrap() {
        for key in ["gauss", "codazzi", "ricci"] {
            assert!(row[key].as_f64().unwrap() < 1e-6);
        }
    }
    let keys: Vec<&String> = r.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["command", "config", "results", "failures"]);
}

#[test]
fn pseudoflat_curvature_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(hpq(&["pseudoflat", "--p", "3", "--q", "2", "--theta", "0", "--report", "curvature"], &out), 0);
    let pt = &json(&out)["results"]["points"][0];
    assert!(pt["scal"].as_f64().unwrap().abs() < 1e-8);
    assert!((pt["ii_norm_sq"].as_f64().unwrap() - 6.0).abs() < 1e-8);
}

#[test]
fn product_bochner_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(hpq(&["product", "--n", "2,1", "--alpha", "maximal", "--q", "1", "--report", "bochner"], &out), 0);
    let pt = &json(&out)["results"]["points"][0];
    assert!(pt["rhs_total"].as_f64().unwrap().abs() < 1e-5);
}

#[test]
fn bochner_check_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("chart.json");
    std::fs::write(&spec, r#"{"kind":"product","n":[1,1],"alpha":"maximal","q":1}"#).unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(hpq(&["bochner-check", "--input", spec.to_str().unwrap(), "--grid", "3"], &out), 0);
    let rows = json(&out)["results"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r["residual"].as_f64().unwrap() < 1e-5));
}

fn csv_column(text: &str, name: &str) -> Vec<String> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let idx = rd.headers().unwrap().iter().position(|h| h == name).unwrap();
    rd.records().map(|r| r.unwrap()[idx].to_string()).collect()
}

#[test]
fn product_sweep_gives_the_sharp_ii_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    assert_eq!(hpq(&["sweep", "--family", "product", "--p", "4", "--q", "3"], &out), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let ii: Vec<f64> = csv_column(&text, "ii_norm_sq").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(ii.len(), 4);
    for (got, want) in ii.iter().zip([0.0, 4.0, 8.0, 12.0]) {
        assert!((got - want).abs() < 1e-8);
    }
}

#[test]
fn pseudoflat_sweep_mean_curvature_grows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    assert_eq!(hpq(&["sweep", "--family", "pseudoflat", "--p", "2", "--q", "2", "--theta", "0,0.2,0.4"], &out), 0);
    let h: Vec<f64> = csv_column(&std::fs::read_to_string(&out).unwrap(), "h_norm").iter().map(|s| s.parse().unwrap()).collect();
    assert!(h[0] < 1e-8 && h[1] > h[0] && h[2] > h[1]);
}

#[test]
fn empty_sweep_writes_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    assert_eq!(hpq(&["sweep", "--family", "pseudoflat", "--theta", ""], &out), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("family,"));
}

#[test]
fn sweep_rows_report_their_own_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    assert_eq!(hpq(&["sweep", "--family", "pseudoflat", "--p", "2", "--q", "1", "--theta", "0,0.3"], &out), 0);
    let errors = csv_column(&std::fs::read_to_string(&out).unwrap(), "error");
    assert!(errors[0].is_empty() && !errors[1].is_empty());
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(hpq(&["verify", "--charts", "2", "--tol-residual", "1e-30"], &out), 1);
    assert!(!json(&out)["failures"].as_array().unwrap().is_empty());
}

#[test]
fn usage_and_input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(hpq(&["verify", "--suite", "nonsense"], &out), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"p\": 2,\n \"q\": 1,\n \"vertices\": [[1, 0,]]}\n").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_hpq")).args(["plateau", "--input", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("line 3"));
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 3] = [
        &["verify", "--suite", "fundamental", "--p", "3", "--q", "2", "--seed", "11"],
        &["verify", "--suite", "maximal", "--p", "3", "--q", "2", "--points", "3", "--seed", "5"],
        &["product", "--n", "2,1", "--report", "bochner", "--points", "4", "--seed", "9"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let a = dir.path().join(format!("a{i}"));
        let b = dir.path().join(format!("b{i}"));
        assert_eq!(hpq(args, &a), 0);
        let mut single: Vec<&str> = args.to_vec();
        single.extend(["--jobs", "1"]);
        assert_eq!(hpq(&single, &b), 0);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
