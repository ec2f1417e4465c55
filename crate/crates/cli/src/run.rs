//! Mode dispatch, problem construction and output files.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use pmc_core::barriers::{self, BarrierSpec};
use pmc_core::exhaustion::{self, AsymptoticProblem, Resolution};
use pmc_core::geometry::{make_chart, Chart, ChartKind, ChartParams};
use pmc_core::mesh::{Grid, GridFunction, NodeKind};
use pmc_core::operator::PmcProblem;
use pmc_core::solver::{sandwich_solve, solve_dirichlet, solve_dirichlet_from, SolveReport};
use pmc_core::verify::{
    certificate_evaluate, comparison_check, oracle_max_deviation, shift_negative, CertificateSummary,
    VerifyDiagnostics,
};
use pmc_core::PmcError;

use crate::config::{ChartSpec, FieldSpec, Mode, RunConfig, SampleTable};
use crate::expr::Expr;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 4,
            CliError::NonConvergence(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Output(_) => 1,
        }
    }

    fn from_core(context: &str, e: PmcError) -> CliError {
        let msg = format!("{context}: {e}");
        match e {
            PmcError::NonConvergence { .. }
            | PmcError::SingularLinearSystem(_)
            | PmcError::NonDecreasingDifferences { .. } => CliError::NonConvergence(msg),
            PmcError::OrderingViolation { .. } | PmcError::HeightBoundViolation { .. } => CliError::Validation(msg),
            PmcError::Io(_) => CliError::Output(msg),
            _ => CliError::Config(msg),
        }
    }
}

type Field = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone, Debug)]
pub struct Options {
    pub config: PathBuf,
    pub mesh_out: Option<PathBuf>,
    pub seed: u64,
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.solver
        .validate()
        .map_err(|e| CliError::Config(format!("key 'solver': {e}")))?;
    Ok(cfg)
}

fn build_chart(spec: &ChartSpec) -> Result<Chart, CliError> {
    let kind: ChartKind = spec
        .kind
        .parse()
        .map_err(|e| CliError::Config(format!("key 'chart.kind': {e}")))?;
    let mut params = match (spec.disc_radius, &spec.bounds) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "keys 'chart.disc_radius' and 'chart.bounds' are mutually exclusive".into(),
            ))
        }
        (Some(r), None) => ChartParams::disc(r),
        (None, Some(b)) => ChartParams {
            bounds: Some(b.iter().map(|&[l, u]| (l, u)).collect()),
            pole_patch: spec.pole_patch,
            ..Default::default()
        },
        (None, None) => ChartParams {
            pole_patch: spec.pole_patch,
            ..Default::default()
        },
    };
    params.polar = params.polar || spec.polar;
    if let Some(eps) = spec.pole_epsilon {
        params.pole_epsilon = eps;
    }
    make_chart(kind, spec.n, &params).map_err(|e| CliError::Config(format!("key 'chart': {e}")))
}

fn table_field(t: &SampleTable, names: &[&str], key: &str) -> Result<Field, CliError> {
    let idx = names.iter().position(|n| *n == t.coordinate).ok_or_else(|| {
        CliError::Config(format!(
            "key '{key}.table.coordinate': unknown coordinate '{}' (have {})",
            t.coordinate,
            names.join(", ")
        ))
    })?;
    let pts: Vec<[f64; 2]> = t.samples.clone();
    if pts.len() < 2 || pts.windows(2).any(|w| !(w[0][0] < w[1][0])) || pts.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!(
            "key '{key}.table.samples': need at least two finite samples with strictly increasing abscissae"
        )));
    }
    let period = t.period;
    if let Some(p) = period {
        if !(p > 0.0) || pts[pts.len() - 1][0] - pts[0][0] >= p {
            return Err(CliError::Config(format!(
                "key '{key}.table.period': samples must span less than one period"
            )));
        }
    }
    Ok(Arc::new(move |x: &[f64]| {
        let mut s = x[idx];
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        if let Some(p) = period {
            s = first[0] + (s - first[0]).rem_euclid(p);
            if s > last[0] {
                // wrap segment from the last sample to the first one a period later
                let t = (s - last[0]) / (first[0] + p - last[0]);
                return last[1] + t * (first[1] - last[1]);
            }
        } else if s <= first[0] {
            return first[1];
        } else if s >= last[0] {
            return last[1];
        }
        let i = pts.partition_point(|q| q[0] <= s).clamp(1, pts.len() - 1);
        let (a, b) = (pts[i - 1], pts[i]);
        a[1] + (s - a[0]) / (b[0] - a[0]) * (b[1] - a[1])
    }))
}

fn field(spec: &FieldSpec, names: &[&str], key: &str) -> Result<Field, CliError> {
    match spec {
        FieldSpec::Constant(c) => {
            let c = *c;
            if !c.is_finite() {
                return Err(CliError::Config(format!("key '{key}': value must be finite")));
            }
            Ok(Arc::new(move |_| c))
        }
        FieldSpec::Expression(s) => {
            let e = Expr::parse(s, names).map_err(|e| CliError::Config(format!("key '{key}': {e} in \"{s}\"")))?;
            Ok(Arc::new(move |x| e.eval(x)))
        }
        FieldSpec::Table { table } => table_field(table, names, key),
    }
}

fn required<'a, T>(v: &'a Option<T>, key: &str, mode: Mode) -> Result<&'a T, CliError> {
    v.as_ref()
        .ok_or_else(|| CliError::Config(format!("key '{key}' is required in mode {}", mode.as_str())))
}

/// Evaluates a field at the given nodes, failing on the first non-finite
/// value.
fn sample(f: &Field, grid: &Grid, nodes: impl Iterator<Item = usize>, key: &str) -> Result<Vec<f64>, CliError> {
    let mut out = vec![0.0; grid.len()];
    for p in nodes {
        let x = grid.coords(p);
        let v = f(&x);
        if !v.is_finite() {
            return Err(CliError::Config(format!(
                "key '{key}': non-finite value {v} at node {p} (coordinates {x:?})"
            )));
        }
        out[p] = v;
    }
    Ok(out)
}

struct Built {
    problem: PmcProblem,
    boundary: Field,
}

fn build_problem(cfg: &RunConfig) -> Result<Built, CliError> {
    let chart = build_chart(required(&cfg.chart, "chart", cfg.mode)?)?;
    let counts = &required(&cfg.grid, "grid", cfg.mode)?.counts;
    let grid = Arc::new(Grid::new(Arc::new(chart), counts).map_err(|e| CliError::Config(format!("key 'grid': {e}")))?);
    let names: Vec<String> = grid.chart().coordinate_names().to_vec();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let h = field(required(&cfg.h, "H", cfg.mode)?, &names, "H")?;
    let boundary = field(required(&cfg.boundary, "boundary", cfg.mode)?, &names, "boundary")?;
    let hv = sample(&h, &grid, 0..grid.len(), "H")?;
    let bv = sample(&boundary, &grid, grid.dirichlet_nodes(), "boundary")?;
    let problem = PmcProblem::from_values(grid, hv, bv).map_err(|e| CliError::Config(format!("problem: {e}")))?;
    Ok(Built { problem, boundary })
}

struct Writer {
    dir: PathBuf,
}

impl Writer {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let dir = cfg.output.dir.clone();
        fs::create_dir_all(&dir).map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Writer { dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
        File::create(path)
            .map(BufWriter::new)
            .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))
    }

    fn json(&self, name: &str, v: &impl Serialize) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        serde_json::to_writer_pretty(Self::create(&path)?, v)
            .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn csv(&self, name: &str, u: &GridFunction) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        u.write_csv(Self::create(&path)?)
            .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn mesh(&self, path: &Option<PathBuf>, u: &GridFunction) -> Result<(), CliError> {
        if let Some(p) = path {
            exhaustion::write_obj(u, Self::create(p)?).map_err(|e| match e {
                PmcError::Io(e) => CliError::Output(format!("{}: {e}", p.display())),
                e => CliError::Config(format!("--mesh-out: {e}")),
            })?;
        }
        Ok(())
    }
}

fn check_mesh_grid(opts: &Options, grid: &Grid) -> Result<(), CliError> {
    if opts.mesh_out.is_some() && !(grid.has_pole() && grid.dim() == 2) {
        return Err(CliError::Config(
            "--mesh-out needs a two-dimensional disc grid (chart.disc_radius)".into(),
        ));
    }
    Ok(())
}

fn solve_summary(mode: Mode, rep: &SolveReport) -> String {
    format!(
        "{}: converged in {} iterations, residual {:.2e}, sup|u| = {:.6}, max|grad u| = {:.4}",
        mode.as_str(),
        rep.iterations,
        rep.final_residual(),
        rep.sup_u,
        rep.max_grad
    )
}

pub fn run(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    match cfg.mode {
        Mode::Dirichlet => run_dirichlet(cfg, opts),
        Mode::Sandwich => run_sandwich(cfg, opts),
        Mode::Asymptotic => run_asymptotic(cfg, opts),
        Mode::Barriers => run_barriers(cfg, opts),
        Mode::VerifySuite => run_verify(cfg, opts),
    }
}

/// Writes the best iterate of a failed solve before reporting the failure.
fn failed_solve(out: &Writer, cfg: &RunConfig, e: PmcError) -> CliError {
    if let PmcError::NonConvergence { reason, best } = &e {
        let (u, rep) = best.as_ref();
        let written = out
            .json(&cfg.output.report, &json!({"mode": cfg.mode.as_str(), "error": reason, "report": rep}))
            .and_then(|_| out.csv(&cfg.output.solution, u));
        if let Err(w) = written {
            return w;
        }
    }
    CliError::from_core("solve", e)
}

fn run_dirichlet(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    let built = build_problem(cfg)?;
    check_mesh_grid(opts, built.problem.grid())?;
    let out = Writer::new(cfg)?;
    let (u, rep) = solve_dirichlet(&built.problem, &cfg.solver).map_err(|e| failed_solve(&out, cfg, e))?;
    let report = out.json(&cfg.output.report, &json!({"mode": cfg.mode.as_str(), "report": rep}))?;
    out.csv(&cfg.output.solution, &u)?;
    out.mesh(&opts.mesh_out, &u)?;
    Ok(format!("{} (report: {})", solve_summary(cfg.mode, &rep), report.display()))
}

fn run_sandwich(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    let built = build_problem(cfg)?;
    let grid = built.problem.grid().clone();
    if !(grid.has_pole() && grid.dim() == 2) {
        return Err(CliError::Config(
            "mode sandwich needs a two-dimensional disc grid (chart.disc_radius)".into(),
        ));
    }
    let out = Writer::new(cfg)?;
    let radius = grid.chart().axes()[0].upper;
    let b = built.boundary.clone();
    let phi = move |t: f64| b(&[radius, t]);
    let outcome = sandwich_solve(&built.problem, &phi, &cfg.solver, &cfg.sandwich).map_err(|e| {
        if let PmcError::OrderingViolation { .. } = e {
            let _ = out.json(&cfg.output.report, &json!({"mode": cfg.mode.as_str(), "error": e.to_string()}));
        }
        CliError::from_core("sandwich", e)
    })?;
    let levels: Vec<Value> = outcome
        .levels
        .iter()
        .map(|l| json!({"k": l.k, "reports": l.reports}))
        .collect();
    let report = out.json(
        &cfg.output.report,
        &json!({
            "mode": cfg.mode.as_str(),
            "report": outcome.report,
            "certificate": outcome.certificate,
            "levels": levels,
        }),
    )?;
    out.csv(&cfg.output.solution, &outcome.u)?;
    out.mesh(&opts.mesh_out, &outcome.u)?;
    Ok(format!(
        "{}; ordering certified (max violation {:.1e}) (report: {})",
        solve_summary(cfg.mode, &outcome.report),
        outcome.certificate.max_violation(),
        report.display()
    ))
}

fn run_asymptotic(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    let spec = &cfg.asymptotic;
    if spec.n != 2 {
        return Err(CliError::Config(format!(
            "key 'asymptotic.n': only n = 2 is supported, got {}",
            spec.n
        )));
    }
    let phi = field(required(&cfg.boundary, "boundary", cfg.mode)?, &["theta"], "boundary")?;
    let h = field(required(&cfg.h, "H", cfg.mode)?, &["rho", "theta"], "H")?;
    let phi1 = Arc::clone(&phi);
    let mut ap = AsymptoticProblem::new(Arc::new(move |t| phi1(&[t])), h);
    ap.schedule = spec.schedule.clone();
    ap.resolution = Resolution {
        radial_per_unit: spec.radial_per_unit,
        rim_per_unit: spec.rim_per_unit.unwrap_or(spec.radial_per_unit / 2.0),
    };
    ap.monitored = spec.monitored.clone();
    ap.tolerance = spec.tolerance;
    ap.margin_factor = spec.margin;
    ap.mollify = spec.mollify;
    for i in 0..pmc_core::solver::SMOOTHING_SAMPLES {
        let t = 2.0 * std::f64::consts::PI * i as f64 / pmc_core::solver::SMOOTHING_SAMPLES as f64;
        if !phi(&[t]).is_finite() {
            return Err(CliError::Config(format!("key 'boundary': non-finite value at theta = {t}")));
        }
    }
    let out = Writer::new(cfg)?;
    let rep = exhaustion::solve_asymptotic(&ap, &cfg.solver).map_err(|e| {
        if !matches!(e, PmcError::NonConvergence { .. }) {
            let _ = out.json(&cfg.output.report, &json!({"mode": cfg.mode.as_str(), "error": e.to_string()}));
        }
        match e {
            PmcError::NonConvergence { .. } => failed_solve(&out, cfg, e),
            PmcError::InvalidProblem(m) | PmcError::OutOfRange(m) => CliError::Config(format!("key 'asymptotic': {m}")),
            e => CliError::from_core("exhaustion", e),
        }
    })?;
    let report = out.json(&cfg.output.report, &json!({"mode": cfg.mode.as_str(), "report": rep}))?;
    out.csv(&cfg.output.solution, rep.final_solution())?;
    if spec.per_k_csv {
        for (s, u) in rep.solves.iter().zip(&rep.solutions) {
            out.csv(&format!("solution_k{}.csv", s.k), u)?;
        }
    }
    out.mesh(&opts.mesh_out, rep.final_solution())?;
    rep.check_monotone().map_err(|e| CliError::from_core("exhaustion", e))?;
    let s = rep
        .differences
        .iter()
        .map(|d| format!("s_{}(k_last) = {:.2e}", d.m, d.s.last().copied().unwrap_or(0.0)))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!(
        "asymptotic: {} discs solved, sup|u_k| = {:.4} <= {:.4}, {s}, numerically converged: {} (report: {})",
        rep.solves.len(),
        rep.max_height,
        rep.height_bound,
        rep.converged_numerically,
        report.display()
    ))
}

#[derive(Serialize)]
struct BarrierCase {
    n: usize,
    k: u32,
    #[serde(rename = "C")]
    c: f64,
    rho_k: f64,
    #[serde(rename = "H_k")]
    h_k: f64,
    height_bound: f64,
    max_identity_residual: f64,
    max_q_residual: f64,
    min_margin: f64,
}

const IDENTITY_TOLERANCE: f64 = 1e-12;
const Q_TOLERANCE: f64 = 1e-10;

fn run_barriers(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    let spec = required(&cfg.barriers, "barriers", cfg.mode)?;
    if spec.samples == 0 || spec.c.is_empty() || spec.k.is_empty() || spec.n.is_empty() {
        return Err(CliError::Config("key 'barriers': n, k, C and samples must be non-empty".into()));
    }
    let h_target = spec.h.unwrap_or(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cases = Vec::new();
    for &n in &spec.n {
        for &k in &spec.k {
            for &c in &spec.c {
                let s = BarrierSpec::new(n, k, spec.m0, c).map_err(|e| CliError::Config(format!("key 'barriers': {e}")))?;
                let speed = c / (1.0 + c * c).sqrt();
                let (mut ident, mut qres, mut margin) = (0.0f64, 0.0f64, f64::INFINITY);
                for _ in 0..spec.samples {
                    let rho = rng.random_range(1e-3 * s.rho_k..=s.rho_k);
                    let q = barriers::q_radial(&s, rho, h_target).map_err(|e| CliError::Config(e.to_string()))?;
                    let target = -speed * n as f64 * barriers::hyperbolic_cylinder_curvature(n, rho);
                    ident = ident.max(q.identity_residual.abs());
                    qres = qres.max((q.q - target).abs());
                    margin = margin.min(q.margin);
                }
                cases.push(BarrierCase {
                    n,
                    k,
                    c,
                    rho_k: s.rho_k,
                    h_k: s.h_k,
                    height_bound: s.height_bound(),
                    max_identity_residual: ident,
                    max_q_residual: qres,
                    min_margin: margin,
                });
            }
        }
    }
    let ident = cases.iter().fold(0.0f64, |m, c| m.max(c.max_identity_residual));
    let qres = cases.iter().fold(0.0f64, |m, c| m.max(c.max_q_residual));
    let passed = ident <= IDENTITY_TOLERANCE && qres <= Q_TOLERANCE;
    let out = Writer::new(cfg)?;
    let report = out.json(
        &cfg.output.report,
        &json!({
            "mode": cfg.mode.as_str(),
            "seed": opts.seed,
            "H": h_target,
            "max_identity_residual": ident,
            "max_q_residual": qres,
            "passed": passed,
            "cases": cases,
        }),
    )?;
    if !passed {
        return Err(CliError::Validation(format!(
            "barrier identities exceed tolerance: |h''-κh'| = {ident:e}, |Q - Q_closed| = {qres:e}"
        )));
    }
    Ok(format!(
        "barriers: {} cases, max|h''-κh'| = {ident:.1e}, max|Q - Q_closed| = {qres:.1e} (report: {})",
        cases.len(),
        report.display()
    ))
}

/// Node closest to `center`, or the pole, or the node nearest the box
/// centre.
fn center_node(grid: &Grid, center: &Option<Vec<f64>>) -> Result<usize, CliError> {
    let target = match center {
        Some(c) => {
            if c.len() != grid.dim() {
                return Err(CliError::Config(format!(
                    "key 'verify.center': expected {} coordinates",
                    grid.dim()
                )));
            }
            c.clone()
        }
        None if grid.has_pole() => return Ok(0),
        None => grid.chart().axes().iter().map(|a| 0.5 * (a.lower + a.upper)).collect(),
    };
    let d2 = |p: usize| -> f64 {
        grid.coords(p).iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    Ok((0..grid.len())
        .filter(|&p| grid.kind(p) != NodeKind::Dirichlet)
        .min_by(|&a, &b| d2(a).total_cmp(&d2(b)))
        .unwrap_or(0))
}

fn run_verify(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    let built = build_problem(cfg)?;
    let pb = &built.problem;
    let grid = pb.grid().clone();
    check_mesh_grid(opts, &grid)?;
    let v = &cfg.verify;
    let out = Writer::new(cfg)?;
    let (u, mut rep) = solve_dirichlet(pb, &cfg.solver).map_err(|e| failed_solve(&out, cfg, e))?;

    let oracle = oracle_max_deviation(pb, &u).map_err(|e| CliError::from_core("oracle", e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut guess = u.clone();
    let x: Vec<f64> = u
        .unknown_values()
        .iter()
        .map(|a| a + v.perturbation * rng.random_range(-1.0..1.0))
        .collect();
    guess.set_unknowns(&x);
    let (u2, _) = solve_dirichlet_from(pb, &cfg.solver, Some(&guess)).map_err(|e| CliError::from_core("second solve", e))?;
    let c12 = comparison_check(&u, &u2, v.comparison_tolerance).map_err(|e| CliError::from_core("comparison", e))?;
    let c21 = comparison_check(&u2, &u, v.comparison_tolerance).map_err(|e| CliError::from_core("comparison", e))?;
    let violation = c12.max_violation.max(c21.max_violation).max(0.0);

    let o = center_node(&grid, &v.center)?;
    let cert = certificate_evaluate(&shift_negative(&u), o, v.radius, v.c1)
        .map_err(|e| CliError::Config(format!("key 'verify': {e}")))?;
    rep.verify = Some(VerifyDiagnostics {
        oracle_max_dev: oracle.max_deviation,
        comparison_max_violation: violation,
        certificate: CertificateSummary::from(&cert),
    });
    let report = out.json(
        &cfg.output.report,
        &json!({
            "mode": cfg.mode.as_str(),
            "report": rep,
            "oracle": oracle,
            "certificate": cert,
            "comparison_tolerance": v.comparison_tolerance,
        }),
    )?;
    out.csv(&cfg.output.solution, &u)?;
    out.mesh(&opts.mesh_out, &u)?;
    if violation > v.comparison_tolerance {
        return Err(CliError::Validation(format!(
            "solutions from two initial guesses differ by {violation:e} (tolerance {:e})",
            v.comparison_tolerance
        )));
    }
    Ok(format!(
        "{}; oracle max deviation {:.2e}, initial-guess spread {:.1e}, W = {:.4}, w(o) = {:.4} (report: {})",
        solve_summary(cfg.mode, &rep),
        oracle.max_deviation,
        violation,
        cert.w_bound,
        cert.w_o,
        report.display()
    ))
}
