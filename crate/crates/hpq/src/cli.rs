//! Command-line front end.
//!
//! Every command writes one JSON report `{"command","config","results","failures"}`
//! except `sweep`, which writes CSV. Exit codes: 0 success, 1 a check failed,
//! 2 usage or input error.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bochner::{bochner_terms, maximum_principle_inequality, BochnerReport};
use crate::curvature::{bound_check, curvature_at, fundamental_residuals, BoundCheck};
use crate::immersion::{fundamental_data, GraphChart, ImmersionChart, ImmersionError, JetMode, ParamBox};
use crate::plateau::{solve, Boundary, CurvatureSummary, SolverConfig};
use crate::products::{
    balanced_partition, ChartSpec, ProductSpec, PseudoFlatSpec, WeightKeyword, Weights, DEFAULT_HALF_WIDTH,
};
use crate::spaceform::{Lcg, Polyhedron, RaySet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Redraws allowed per sample point before a degenerate chart is an error.
const MAX_DRAWS: usize = 1000;
/// Largest condition number of the induced metric at a sampled point.
const MAX_SAMPLE_CONDITION: f64 = 10.0;

fn metric_condition(g: &nalgebra::DMatrix<f64>) -> f64 {
    let ev = g.clone().symmetric_eigen().eigenvalues;
    ev.max() / ev.min()
}

/// Comma separated values; the empty string is the empty list.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(List(Vec::new()));
        }
        s.split(',').map(|t| t.trim().parse::<T>().map_err(|e| format!("`{t}`: {e}"))).collect::<Result<_, _>>().map(List)
    }
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "hpq", version, about = "Spacelike submanifolds of pseudo-hyperbolic space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub jobs: Option<usize>,
    /// Report destination (default: stdout).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub tol: Tolerances,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Tolerances {
    /// Gauss, Codazzi and Ricci equation residuals.
    #[arg(long = "tol-residual", global = true, default_value_t = 1e-6)]
    pub residual: f64,
    #[arg(long = "tol-trace", global = true, default_value_t = 1e-7)]
    pub trace: f64,
    /// Agreement with closed forms.
    #[arg(long = "tol-closed", global = true, default_value_t = 1e-8)]
    pub closed: f64,
    /// `‖H‖` below which a chart counts as maximal.
    #[arg(long = "tol-maximal", global = true, default_value_t = 1e-5)]
    pub maximal: f64,
    /// Slack on the sharp curvature bounds.
    #[arg(long = "tol-bound", global = true, default_value_t = 1e-8)]
    pub bound: f64,
    #[arg(long = "tol-bochner", global = true, default_value_t = 1e-5)]
    pub bochner: f64,
    /// Slack on `ΔScal − 2p·Scal ≥ 0`.
    #[arg(long = "tol-principle", global = true, default_value_t = 1e-4)]
    pub principle: f64,
    /// Plateau stopping residual.
    #[arg(long = "tol-h", global = true, default_value_t = 1e-3)]
    pub h: f64,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Run a verification suite.
    Verify(VerifyArgs),
    /// Evaluate a product of hyperbolic factors.
    Product(ProductArgs),
    /// Evaluate a Cartan orbit (pseudo-flat).
    Pseudoflat(PseudoflatArgs),
    /// Tabulate the Bochner terms over a parameter grid.
    BochnerCheck(BochnerArgs),
    /// Solve the discrete Plateau problem.
    Plateau(PlateauArgs),
    /// CSV sweep over a family of model submanifolds.
    Sweep(SweepArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Verify(_) => "verify",
            Command::Product(_) => "product",
            Command::Pseudoflat(_) => "pseudoflat",
            Command::BochnerCheck(_) => "bochner-check",
            Command::Plateau(_) => "plateau",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Gauss, Codazzi, Ricci and trace residuals on random graph charts.
    Fundamental,
    /// Bounds, Bochner closure and maximum principle on closed-form maximal charts.
    Maximal,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::Fundamental)]
    pub suite: Suite,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    /// Number of random charts.
    #[arg(long, default_value_t = 10)]
    pub charts: usize,
    /// Sample points per chart.
    #[arg(long, default_value_t = 3)]
    pub points: usize,
    #[arg(long, default_value_t = 0.3)]
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Report {
    Curvature,
    Bochner,
    Bounds,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProductArgs {
    /// Factor dimensions.
    #[arg(long, default_value = "1,1")]
    pub n: List<usize>,
    /// `maximal` or one weight per factor.
    #[arg(long, default_value = "maximal")]
    pub alpha: String,
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    #[arg(long, value_enum, default_value_t = Report::Curvature)]
    pub report: Report,
    /// Evaluation points: the chart centre plus seeded samples.
    #[arg(long, default_value_t = 1)]
    pub points: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PseudoflatArgs {
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    /// Unit vector in the spare normal directions (default: first axis).
    #[arg(long)]
    pub mu: Option<List<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    #[arg(long, value_enum, default_value_t = Report::Curvature)]
    pub report: Report,
    #[arg(long, default_value_t = 1)]
    pub points: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BochnerArgs {
    /// Chart spec JSON; without it the product flags are used.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "1,1")]
    pub n: List<usize>,
    #[arg(long, default_value = "maximal")]
    pub alpha: String,
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    /// Grid points per parameter axis.
    #[arg(long, default_value_t = 3)]
    pub grid: usize,
    /// Half width of the grid as a fraction of the chart half width.
    #[arg(long, default_value_t = 0.5)]
    pub span: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlateauArgs {
    /// Ray set JSON `{"p","q","vertices"}`; default: the polyhedron of `--p --q`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    /// Relative jitter of the boundary rays.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub fit_ring: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Per-vertex CSV for plotting.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Maximal products with balanced factor dimensions.
    Product,
    Pseudoflat,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = Family::Product)]
    pub family: Family,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    /// Numbers of factors (default: 1..=min(p, q+1)).
    #[arg(long)]
    pub k: Option<List<usize>>,
    #[arg(long, default_value = "0")]
    pub theta: List<f64>,
    #[arg(long)]
    pub mu: Option<List<f64>>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Io(String),
}

impl From<crate::products::ProductError> for CliError {
    fn from(e: crate::products::ProductError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<crate::immersion::ImmersionError> for CliError {
    fn from(e: crate::immersion::ImmersionError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<crate::plateau::PlateauError> for CliError {
    fn from(e: crate::plateau::PlateauError) -> Self {
        CliError::Usage(e.to_string())
    }
}

struct Outcome {
    results: Value,
    failures: Vec<String>,
}

impl Outcome {
    fn new(results: impl Serialize, failures: Vec<String>) -> Self {
        Self { results: serde_json::to_value(results).expect("serializable results"), failures }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(CliError::Usage(m)) | Err(CliError::Io(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.common.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| {
        if let Command::Sweep(args) = &cli.command {
            let (csv, failed) = sweep_csv(args, &cli.common.tol)?;
            write_output(cli.common.output.as_deref(), csv.as_bytes())?;
            return Ok(if failed { EXIT_FAILED } else { EXIT_OK });
        }
        let c = &cli.common;
        let outcome = match &cli.command {
            Command::Verify(a) => verify(a, c)?,
            Command::Product(a) => product(a, c)?,
            Command::Pseudoflat(a) => pseudoflat(a, c)?,
            Command::BochnerCheck(a) => bochner_check(a, c)?,
            Command::Plateau(a) => plateau(a, c)?,
            Command::Sweep(_) => unreachable!(),
        };
        let report = json!({
            "command": cli.command.name(),
            "config": { "args": &cli.command, "seed": c.seed, "tolerances": &c.tol },
            "results": outcome.results,
            "failures": outcome.failures,
        });
        let mut text = serde_json::to_string_pretty(&report).expect("serializable report");
        text.push('\n');
        write_output(c.output.as_deref(), text.as_bytes())?;
        Ok(if outcome.failures.is_empty() { EXIT_OK } else { EXIT_FAILED })
    })
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn weights(alpha: &str) -> Result<Weights, CliError> {
    if alpha.trim() == "maximal" {
        return Ok(Weights::Keyword(WeightKeyword::Maximal));
    }
    alpha.parse::<List<f64>>().map(|l| Weights::Values(l.0)).map_err(|e| CliError::Usage(format!("--alpha {e}")))
}

fn product_spec(n: &[usize], alpha: &str) -> Result<ProductSpec, CliError> {
    Ok(match weights(alpha)? {
        Weights::Keyword(WeightKeyword::Maximal) => ProductSpec::maximal(n.to_vec())?,
        Weights::Values(a) => ProductSpec::new(n.to_vec(), a)?,
    })
}

fn pseudoflat_spec(p: usize, q: usize, mu: Option<&List<f64>>, theta: f64) -> Result<PseudoFlatSpec, CliError> {
    let mut spec = PseudoFlatSpec::maximal(p, q)?;
    if let Some(mu) = mu {
        spec.mu = mu.0.clone();
    }
    spec.theta = theta;
    spec.validate()?;
    Ok(spec)
}

/// The chart centre followed by `count − 1` seeded samples.
fn evaluation_points(chart: &ImmersionChart, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Lcg::new(seed);
    let margin = 0.5 * (chart.domain().hi[0] - chart.domain().lo[0]) * 0.5;
    (0..count.max(1))
        .map(|i| if i == 0 { vec![0.0; chart.p()] } else { chart.domain().sample(&mut rng, margin) })
        .collect()
}

#[derive(Debug, Serialize)]
struct CurvatureRow {
    u: Vec<f64>,
    scal: f64,
    ii_norm_sq: f64,
    h_norm: f64,
    ric_eigenvalues: Vec<f64>,
    max_abs_sec: f64,
    trace_residual: f64,
    gauss_residual: Option<f64>,
}

fn curvature_row(chart: &ImmersionChart, u: &[f64]) -> Result<CurvatureRow, CliError> {
    let (fd, r) = curvature_at(chart, u, -1.0)?;
    Ok(CurvatureRow {
        u: u.to_vec(),
        scal: r.scal,
        ii_norm_sq: fd.ii_norm_sq(),
        h_norm: fd.mean_curvature_norm_sq().sqrt(),
        ric_eigenvalues: r.ric_eigenvalues.clone(),
        max_abs_sec: r.sec.amax(),
        trace_residual: r.trace_residual,
        gauss_residual: r.gauss_residual,
    })
}

#[derive(Debug, Serialize)]
struct BoundRow {
    u: Vec<f64>,
    #[serde(flatten)]
    check: BoundCheck,
}

fn bound_row(chart: &ImmersionChart, u: &[f64], tol: &Tolerances) -> Result<BoundRow, CliError> {
    let (fd, r) = curvature_at(chart, u, -1.0)?;
    Ok(BoundRow { u: u.to_vec(), check: bound_check(&r, &fd, chart.p(), chart.q(), tol.maximal) })
}

fn bound_failures(label: &str, row: &BoundRow, tol: &Tolerances) -> Vec<String> {
    let mut f = Vec::new();
    if !row.check.not_maximal {
        if row.check.scal_margin < -tol.bound {
            f.push(format!("{label}: Scal exceeds its bound by {:e}", -row.check.scal_margin));
        }
        if row.check.ii_margin < -tol.bound {
            f.push(format!("{label}: |II|^2 exceeds its bound by {:e}", -row.check.ii_margin));
        }
    }
    f
}

#[derive(Debug, Serialize)]
struct BochnerRow {
    u: Vec<f64>,
    #[serde(flatten)]
    report: BochnerReport,
    max_principle: f64,
}

fn bochner_row(chart: &ImmersionChart, u: &[f64]) -> Result<BochnerRow, CliError> {
    let report = bochner_terms(chart, u, -1.0)?;
    Ok(BochnerRow { u: u.to_vec(), max_principle: maximum_principle_inequality(&report, chart.p()), report })
}

fn bochner_failures(label: &str, row: &BochnerRow, tol: &Tolerances) -> Vec<String> {
    let mut f = Vec::new();
    if row.report.identity_asserted {
        if row.report.residual > tol.bochner {
            f.push(format!("{label}: Bochner residual {:e}", row.report.residual));
        }
        if row.max_principle < -tol.principle {
            f.push(format!("{label}: maximum principle inequality {:e}", row.max_principle));
        }
    }
    f
}

fn point_label(u: &[f64]) -> String {
    let parts: Vec<String> = u.iter().map(|x| format!("{x:.4}")).collect();
    format!("u=({})", parts.join(","))
}

fn evaluate(chart: &ImmersionChart, points: &[Vec<f64>], report: Report, tol: &Tolerances) -> Result<Outcome, CliError> {
    let mut failures = Vec::new();
    let rows: Value = match report {
        Report::Curvature => {
            let rows = points.par_iter().map(|u| curvature_row(chart, u)).collect::<Result<Vec<_>, _>>()?;
            for r in &rows {
                if r.trace_residual > tol.trace {
                    failures.push(format!("{}: trace identity residual {:e}", point_label(&r.u), r.trace_residual));
                }
                if let Some(g) = r.gauss_residual.filter(|g| *g > tol.residual) {
                    failures.push(format!("{}: Gauss residual {g:e}", point_label(&r.u)));
                }
            }
            serde_json::to_value(rows)
        }
        Report::Bounds => {
            let rows = points.par_iter().map(|u| bound_row(chart, u, tol)).collect::<Result<Vec<_>, _>>()?;
            for r in &rows {
                failures.extend(bound_failures(&point_label(&r.u), r, tol));
            }
            serde_json::to_value(rows)
        }
        Report::Bochner => {
            let rows = points.par_iter().map(|u| bochner_row(chart, u)).collect::<Result<Vec<_>, _>>()?;
            for r in &rows {
                failures.extend(bochner_failures(&point_label(&r.u), r, tol));
            }
            serde_json::to_value(rows)
        }
    }
    .expect("serializable rows");
    Ok(Outcome { results: rows, failures })
}

fn verify(args: &VerifyArgs, common: &Common) -> Result<Outcome, CliError> {
    match args.suite {
        Suite::Fundamental => verify_fundamental(args, common),
        Suite::Maximal => verify_maximal(args, common),
    }
}

#[derive(Debug, Serialize)]
struct ChartResiduals {
    chart_seed: u64,
    gauss: f64,
    codazzi: f64,
    ricci: f64,
    trace: f64,
}

fn verify_fundamental(args: &VerifyArgs, common: &Common) -> Result<Outcome, CliError> {
    let tol = &common.tol;
    let rows = (0..args.charts as u64)
        .into_par_iter()
        .map(|i| {
            let chart_seed = common.seed.wrapping_mul(1_000_003).wrapping_add(i);
            let chart = GraphChart::random(args.p, args.q, chart_seed, args.amplitude)
                .chart(ParamBox::cube(args.p, 0.5), JetMode::ClosedForm)?;
            let mut rng = Lcg::new(chart_seed);
            let mut row = ChartResiduals { chart_seed, gauss: 0.0, codazzi: 0.0, ricci: 0.0, trace: 0.0 };
            for _ in 0..args.points {
                // random graphs can turn timelike away from the origin; redraw
                // points where the induced metric is degenerate or badly conditioned
                let mut draws = 0;
                let u = loop {
                    let u = chart.domain().sample(&mut rng, 0.1);
                    match fundamental_data(&chart, &u) {
                        Ok(fd) if metric_condition(&fd.metric) <= MAX_SAMPLE_CONDITION => break u,
                        Ok(_) | Err(ImmersionError::DegenerateMetric { .. }) if draws < MAX_DRAWS => draws += 1,
                        Ok(_) => return Err(CliError::Usage(format!("chart {chart_seed}: no well-conditioned point"))),
                        Err(e) => return Err(e.into()),
                    }
                };
                let r = fundamental_residuals(&chart, &u)?;
                row.gauss = row.gauss.max(r.gauss);
                row.codazzi = row.codazzi.max(r.codazzi);
                row.ricci = row.ricci.max(r.ricci);
                row.trace = row.trace.max(r.trace);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut failures = Vec::new();
    for r in &rows {
        for (name, value, limit) in [
            ("Gauss", r.gauss, tol.residual),
            ("Codazzi", r.codazzi, tol.residual),
            ("Ricci", r.ricci, tol.residual),
            ("trace", r.trace, tol.trace),
        ] {
            if !(value <= limit) {
                failures.push(format!("chart {}: {name} residual {value:e}", r.chart_seed));
            }
        }
    }
    Ok(Outcome::new(rows, failures))
}

/// Maximal charts available in `H^{p,q}`: balanced products for every admissible
/// number of factors, and the maximal pseudo-flat when it exists.
fn maximal_specs(p: usize, q: usize) -> Vec<ChartSpec> {
    let mut out: Vec<ChartSpec> = (1..=p.min(q + 1))
        .map(|k| ChartSpec::Product {
            n: balanced_partition(p, k),
            alpha: Weights::Keyword(WeightKeyword::Maximal),
            q,
            half_width: None,
        })
        .collect();
    if let Ok(s) = PseudoFlatSpec::maximal(p, q) {
        out.push(ChartSpec::Pseudoflat { p, q, mu: s.mu, theta: 0.0, half_width: None });
    }
    out
}

#[derive(Debug, Serialize)]
struct MaximalRow {
    spec: ChartSpec,
    bounds: Vec<BoundRow>,
    bochner: Vec<BochnerRow>,
}

fn verify_maximal(args: &VerifyArgs, common: &Common) -> Result<Outcome, CliError> {
    let tol = &common.tol;
    let rows = maximal_specs(args.p, args.q)
        .into_par_iter()
        .map(|spec| {
            let chart = spec.build(JetMode::ClosedForm)?;
            let points = evaluation_points(&chart, args.points, common.seed);
            let bounds = points.iter().map(|u| bound_row(&chart, u, tol)).collect::<Result<Vec<_>, _>>()?;
            let bochner = points.iter().map(|u| bochner_row(&chart, u)).collect::<Result<Vec<_>, _>>()?;
            Ok(MaximalRow { spec, bounds, bochner })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut failures = Vec::new();
    for r in &rows {
        let name = serde_json::to_string(&r.spec).expect("serializable spec");
        for b in &r.bounds {
            if b.check.not_maximal {
                failures.push(format!("{name} {}: not maximal, |H| = {:e}", point_label(&b.u), b.check.mean_curvature_norm));
            }
            failures.extend(bound_failures(&format!("{name} {}", point_label(&b.u)), b, tol));
        }
        for b in &r.bochner {
            failures.extend(bochner_failures(&format!("{name} {}", point_label(&b.u)), b, tol));
        }
    }
    Ok(Outcome::new(rows, failures))
}

fn product(args: &ProductArgs, common: &Common) -> Result<Outcome, CliError> {
    let spec = product_spec(&args.n.0, &args.alpha)?;
    let chart = crate::products::product_chart(&spec, args.q, DEFAULT_HALF_WIDTH, JetMode::ClosedForm)?;
    let points = evaluation_points(&chart, args.points, common.seed);
    let mut out = evaluate(&chart, &points, args.report, &common.tol)?;
    let (scal, ii) = crate::products::product_invariants(&spec);
    if args.report == Report::Curvature {
        for row in out.results.as_array().expect("rows") {
            let label = row["u"].to_string();
            let s = row["scal"].as_f64().unwrap_or(f64::NAN);
            let i = row["ii_norm_sq"].as_f64().unwrap_or(f64::NAN);
            if !((s - scal).abs() <= common.tol.closed) {
                out.failures.push(format!("u={label}: Scal {s} differs from closed form {scal}"));
            }
            if !((i - ii).abs() <= common.tol.closed) {
                out.failures.push(format!("u={label}: |II|^2 {i} differs from closed form {ii}"));
            }
        }
    }
    out.results = json!({ "alpha": spec.alpha, "closed_form": { "scal": scal, "ii_norm_sq": ii }, "points": out.results });
    Ok(out)
}

fn pseudoflat(args: &PseudoflatArgs, common: &Common) -> Result<Outcome, CliError> {
    let spec = pseudoflat_spec(args.p, args.q, args.mu.as_ref(), args.theta)?;
    let chart = crate::products::pseudoflat_chart(&spec, DEFAULT_HALF_WIDTH, JetMode::ClosedForm)?;
    let points = evaluation_points(&chart, args.points, common.seed);
    let mut out = evaluate(&chart, &points, args.report, &common.tol)?;
    let h = spec.mean_curvature_norm();
    if args.report == Report::Curvature {
        for row in out.results.as_array().expect("rows") {
            let label = row["u"].to_string();
            let hn = row["h_norm"].as_f64().unwrap_or(f64::NAN);
            let s = row["scal"].as_f64().unwrap_or(f64::NAN);
            if !((hn - h).abs() <= common.tol.closed) {
                out.failures.push(format!("u={label}: |H| {hn} differs from closed form {h}"));
            }
            if !(s.abs() <= common.tol.closed) {
                out.failures.push(format!("u={label}: Scal {s} is not zero"));
            }
        }
    }
    out.results = json!({ "mu": spec.mu, "closed_form": { "h_norm": h, "scal": 0.0 }, "points": out.results });
    Ok(out)
}

fn bochner_check(args: &BochnerArgs, common: &Common) -> Result<Outcome, CliError> {
    let chart = match &args.input {
        Some(path) => read_json::<ChartSpec>(path)?.build(JetMode::ClosedForm)?,
        None => {
            let spec = product_spec(&args.n.0, &args.alpha)?;
            crate::products::product_chart(&spec, args.q, DEFAULT_HALF_WIDTH, JetMode::ClosedForm)?
        }
    };
    if args.grid == 0 || !(args.span > 0.0 && args.span < 1.0) {
        return Err(CliError::Usage("--grid must be positive and --span in (0, 1)".into()));
    }
    let p = chart.p();
    let d = chart.domain();
    let axis = |m: usize, i: usize| {
        let mid = 0.5 * (d.lo[m] + d.hi[m]);
        let half = 0.5 * (d.hi[m] - d.lo[m]) * args.span;
        if args.grid == 1 {
            mid
        } else {
            mid - half + 2.0 * half * i as f64 / (args.grid - 1) as f64
        }
    };
    let total = args.grid.pow(p as u32);
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            (0..p)
                .map(|m| {
                    let i = idx % args.grid;
                    idx /= args.grid;
                    axis(m, i)
                })
                .collect()
        })
        .collect();
    evaluate(&chart, &points, Report::Bochner, &common.tol)
}

#[derive(Debug, Serialize)]
struct PlateauReport {
    vertices: usize,
    iterations: usize,
    residual_h: f64,
    history: Vec<f64>,
    summary: CurvatureSummary,
    core: CurvatureSummary,
}

fn plateau(args: &PlateauArgs, common: &Common) -> Result<Outcome, CliError> {
    let mut boundary = match &args.input {
        Some(path) => Boundary::from_ray_set(&read_json::<RaySet>(path)?)?,
        None => Boundary::polyhedron(&Polyhedron::new(args.p, args.q).map_err(|e| CliError::Usage(e.to_string()))?)?,
    };
    if args.jitter > 0.0 {
        boundary = boundary.jittered(args.jitter, common.seed)?;
    }
    let d = SolverConfig::default();
    let config = SolverConfig {
        step: args.step.unwrap_or(d.step),
        tol_h: common.tol.h,
        max_iters: args.max_iters.unwrap_or(d.max_iters),
        truncation_radius: args.radius.unwrap_or(d.truncation_radius),
        fit_ring: args.fit_ring.unwrap_or(d.fit_ring),
        resolution: args.resolution.unwrap_or(d.resolution),
    };
    config.validate()?;
    match solve(&boundary, &config) {
        Ok(res) => {
            if let Some(path) = &args.csv {
                let file = fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                res.write_csv(file).map_err(|e| CliError::Io(e.to_string()))?;
            }
            let report = PlateauReport {
                vertices: res.mesh.len(),
                iterations: res.iterations,
                residual_h: res.residual_h,
                history: res.history.clone(),
                summary: res.summary,
                core: res.core,
            };
            Ok(Outcome::new(json!({ "solver": config, "solution": report }), Vec::new()))
        }
        Err(e @ crate::plateau::PlateauError::NotConverged { .. })
        | Err(e @ crate::plateau::PlateauError::BoundViolated { .. })
        | Err(e @ crate::plateau::PlateauError::StepCollapse { .. }) => {
            Ok(Outcome::new(json!({ "solver": config, "solution": Value::Null }), vec![e.to_string()]))
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Serialize)]
struct SweepRow {
    family: &'static str,
    p: usize,
    q: usize,
    k: Option<usize>,
    theta: Option<f64>,
    scal: Option<f64>,
    ii_norm_sq: Option<f64>,
    h_norm: Option<f64>,
    scal_margin: Option<f64>,
    ii_margin: Option<f64>,
    error: String,
}

fn sweep_row(family: Family, p: usize, q: usize, k: Option<usize>, theta: Option<f64>, spec: Result<ChartSpec, CliError>, tol: &Tolerances) -> (SweepRow, bool) {
    let name = match family {
        Family::Product => "product",
        Family::Pseudoflat => "pseudoflat",
    };
    let mut row = SweepRow {
        family: name,
        p,
        q,
        k,
        theta,
        scal: None,
        ii_norm_sq: None,
        h_norm: None,
        scal_margin: None,
        ii_margin: None,
        error: String::new(),
    };
    let eval = spec.and_then(|s| {
        let chart = s.build(JetMode::ClosedForm)?;
        let (fd, r) = curvature_at(&chart, &vec![0.0; p], -1.0)?;
        Ok((fd.ii_norm_sq(), r.scal, bound_check(&r, &fd, p, q, tol.maximal)))
    });
    match eval {
        Ok((ii, scal, check)) => {
            row.scal = Some(scal);
            row.ii_norm_sq = Some(ii);
            row.h_norm = Some(check.mean_curvature_norm);
            row.scal_margin = Some(check.scal_margin);
            row.ii_margin = Some(check.ii_margin);
            let violated = !check.not_maximal && (check.scal_margin < -tol.bound || check.ii_margin < -tol.bound);
            (row, violated)
        }
        Err(CliError::Usage(m)) | Err(CliError::Io(m)) => {
            row.error = m;
            (row, false)
        }
    }
}

/// CSV text and whether any row broke a curvature bound.
fn sweep_csv(args: &SweepArgs, tol: &Tolerances) -> Result<(String, bool), CliError> {
    let (p, q) = (args.p, args.q);
    type Job = (Option<usize>, Option<f64>);
    let jobs: Vec<Job> = match args.family {
        Family::Product => {
            let ks = args.k.clone().map(|l| l.0).unwrap_or_else(|| (1..=p.min(q + 1)).collect());
            ks.into_iter().map(|k| (Some(k), None)).collect()
        }
        Family::Pseudoflat => args.theta.0.iter().map(|&t| (None, Some(t))).collect(),
    };
    let rows: Vec<(SweepRow, bool)> = jobs
        .into_par_iter()
        .map(|(k, theta)| {
            let spec = match (args.family, k, theta) {
                (Family::Product, Some(k), _) => {
                    if k == 0 || k > p {
                        Err(CliError::Usage(format!("cannot split p = {p} into {k} factors")))
                    } else {
                        Ok(ChartSpec::Product {
                            n: balanced_partition(p, k),
                            alpha: Weights::Keyword(WeightKeyword::Maximal),
                            q,
                            half_width: None,
                        })
                    }
                }
                (_, _, theta) => pseudoflat_spec(p, q, args.mu.as_ref(), theta.unwrap_or(0.0))
                    .map(|s| ChartSpec::Pseudoflat { p, q, mu: s.mu, theta: s.theta, half_width: None }),
            };
            sweep_row(args.family, p, q, k, theta, spec, tol)
        })
        .collect();
    let failed = rows.iter().any(|(_, v)| *v);
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["family", "p", "q", "k", "theta", "scal", "ii_norm_sq", "h_norm", "scal_margin", "ii_margin", "error"])
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    for (row, _) in &rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok((String::from_utf8(bytes).expect("utf-8 csv"), failed))
}
