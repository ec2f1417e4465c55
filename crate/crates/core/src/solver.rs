//! Damped Newton iteration for the discrete Dirichlet problem, monotone
//! smoothing of continuous boundary data and the comparison sandwich.

use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::barriers::BarrierDiagnostics;
use crate::error::{PmcError, Result};
use crate::linalg::LinearSolver;
use crate::mesh::{GridFunction, NodeKind};
use crate::operator::{assemble, rows_to_matrix, Assembly, PmcProblem};
use crate::verify::{comparison_check, VerifyDiagnostics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    /// Absolute tolerance on `‖F‖_∞`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub backtrack: f64,
    pub min_step: f64,
    pub sufficient_decrease: f64,
    /// Number of equal `H` ramp steps tried when the direct solve fails.
    pub continuation_steps: usize,
    pub linear_solver: LinearSolver,
    /// A residual entry also counts as converged when it is below this many
    /// times its own rounding-error magnitude.
    pub rounding_factor: f64,
    /// Record the ellipticity margin of every iterate.
    pub monitor_ellipticity: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tolerance: 1e-10,
            max_iterations: 50,
            backtrack: 0.5,
            min_step: 2f64.powi(-20),
            sufficient_decrease: 1e-4,
            continuation_steps: 4,
            linear_solver: LinearSolver::default(),
            rounding_factor: 8.0,
            monitor_ellipticity: false,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > 0.0
            && self.max_iterations >= 1
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.min_step > 0.0
            && self.min_step <= 1.0
            && self.sufficient_decrease >= 0.0
            && self.sufficient_decrease < 1.0
            && self.rounding_factor >= 0.0;
        if !ok {
            return Err(PmcError::InvalidProblem(format!("invalid Newton settings {self:?}")));
        }
        if let LinearSolver::Iterative { tolerance, .. } = self.linear_solver {
            if !(tolerance > 0.0) {
                return Err(PmcError::InvalidProblem("linear tolerance must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    /// Linear solves performed, the initial extension included.
    pub iterations: usize,
    /// `‖F‖_∞` of every accepted iterate.
    pub residual_history: Vec<f64>,
    pub sup_u: f64,
    pub max_grad: f64,
    pub wall_ms: f64,
    /// Largest per-row rounding allowance used by the convergence test.
    pub residual_floor: f64,
    /// `H` ramp steps used (0 when the direct solve converged).
    pub continuation_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ellipticity_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyDiagnostics>,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Newton<'a> {
    cfg: &'a NewtonConfig,
    report: SolveReport,
    best: Option<(GridFunction, f64)>,
}

impl<'a> Newton<'a> {
    fn converged(&self, asm: &Assembly) -> bool {
        let k = self.cfg.rounding_factor;
        asm.residual
            .iter()
            .zip(&asm.floor)
            .all(|(f, fl)| f.abs() <= self.cfg.tolerance.max(k * fl))
    }

    fn record(&mut self, u: &GridFunction, asm: &Assembly) {
        let r = inf_norm(&asm.residual);
        self.report.residual_history.push(r);
        if self.cfg.monitor_ellipticity {
            let m = self.report.ellipticity_margin.unwrap_or(f64::INFINITY);
            self.report.ellipticity_margin = Some(m.min(asm.ellipticity_margin));
        }
        if self.best.as_ref().is_none_or(|(_, b)| r < *b) {
            self.best = Some((u.clone(), r));
        }
    }

    fn assemble(&self, problem: &PmcProblem, u: &GridFunction) -> Result<Assembly> {
        assemble(problem, u, true, self.cfg.monitor_ellipticity)
    }

    /// Runs damped Newton from `u`. `Ok(Err(reason))` signals a stall.
    fn run(
        &mut self,
        problem: &PmcProblem,
        mut u: GridFunction,
    ) -> Result<std::result::Result<(GridFunction, Assembly), String>> {
        let grid = Arc::clone(problem.grid());
        let mut asm = self.assemble(problem, &u)?;
        self.record(&u, &asm);
        let mut steps = 0usize;
        loop {
            if self.converged(&asm) {
                return Ok(Ok((u, asm)));
            }
            if steps >= self.cfg.max_iterations {
                return Ok(Err(format!(
                    "{} iterations without reaching tolerance (residual {:e})",
                    steps,
                    inf_norm(&asm.residual)
                )));
            }
            let jac = rows_to_matrix(&grid, &asm.rows);
            let rhs: Vec<f64> = asm.residual.iter().map(|v| -v).collect();
            let delta = self.cfg.linear_solver.solve(&jac, &rhs)?;
            self.report.iterations += 1;
            steps += 1;

            let x0 = u.unknown_values();
            let norm0 = inf_norm(&asm.residual);
            let merit0 = l2_norm(&asm.residual);
            let mut t = 1.0;
            loop {
                let x: Vec<f64> = x0.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
                if x.iter().all(|v| v.is_finite()) {
                    let mut cand = u.clone();
                    cand.set_unknowns(&x);
                    let ca = self.assemble(problem, &cand)?;
                    let merit = l2_norm(&ca.residual);
                    if self.converged(&ca) || merit <= (1.0 - self.cfg.sufficient_decrease * t) * merit0 {
                        debug!(
                            "newton step {steps}: t = {t}, residual {norm0:e} -> {:e}",
                            inf_norm(&ca.residual)
                        );
                        u = cand;
                        asm = ca;
                        self.record(&u, &asm);
                        break;
                    }
                }
                t *= self.cfg.backtrack;
                if t < self.cfg.min_step {
                    return Ok(Err(format!(
                        "line search stalled at residual {norm0:e} after {steps} steps"
                    )));
                }
            }
        }
    }
}

/// Solution of the linearization at `u ≡ 0`, `H ≡ 0` with the given
/// Dirichlet data: the harmonic-like extension used as the cold start.
pub fn harmonic_extension(problem: &PmcProblem, linear: &LinearSolver) -> Result<GridFunction> {
    let grid = Arc::clone(problem.grid());
    let zero_h = problem.with_constant_h(0.0)?;
    let zero = GridFunction::zeros(Arc::clone(&grid));
    let asm = assemble(&zero_h, &zero, true, false)?;
    let bvals = problem.boundary_values();
    let rhs: Vec<f64> = asm
        .rows
        .iter()
        .map(|row| {
            -row.iter()
                .filter(|&&(q, _)| grid.kind(q) == NodeKind::Dirichlet)
                .map(|&(q, c)| c * bvals[q])
                .sum::<f64>()
        })
        .collect();
    let jac = rows_to_matrix(&grid, &asm.rows);
    let x = linear.solve(&jac, &rhs)?;
    let mut u = problem.boundary_extension_by_zero();
    u.set_unknowns(&x);
    Ok(u)
}

fn finish(
    problem: &PmcProblem,
    cfg: &NewtonConfig,
    mut report: SolveReport,
    u: &GridFunction,
    asm: &Assembly,
    start: Instant,
) -> SolveReport {
    report.converged = true;
    report.sup_u = u.sup_norm();
    report.max_grad = asm.max_grad;
    report.residual_floor = cfg.rounding_factor * asm.floor.iter().cloned().fold(0.0, f64::max);
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let _ = problem;
    report
}

/// Solves the discrete Dirichlet problem from the harmonic-like extension.
pub fn solve_dirichlet(problem: &PmcProblem, cfg: &NewtonConfig) -> Result<(GridFunction, SolveReport)> {
    solve_dirichlet_from(problem, cfg, None)
}

/// Solves from `guess` (its Dirichlet values are replaced by the data) or,
/// without a guess, from the harmonic-like extension.
pub fn solve_dirichlet_from(
    problem: &PmcProblem,
    cfg: &NewtonConfig,
    guess: Option<&GridFunction>,
) -> Result<(GridFunction, SolveReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let grid = Arc::clone(problem.grid());
    let mut newton = Newton {
        cfg,
        report: SolveReport::default(),
        best: None,
    };
    let u0 = match guess {
        Some(g) => {
            if !g.same_grid(&GridFunction::zeros(Arc::clone(&grid))) {
                return Err(PmcError::GridMismatch("initial guess on another grid".into()));
            }
            let mut u = g.clone();
            for p in grid.dirichlet_nodes() {
                u.set(p, problem.boundary(p));
            }
            u
        }
        None => {
            newton.report.iterations += 1;
            harmonic_extension(problem, &cfg.linear_solver)?
        }
    };

    let first = newton.run(problem, u0.clone())?;
    let reason = match first {
        Ok((u, asm)) => {
            let rep = finish(problem, cfg, newton.report, &u, &asm, start);
            info!(
                "solve converged: {} iterations, residual {:e}",
                rep.iterations,
                rep.final_residual()
            );
            return Ok((u, rep));
        }
        Err(reason) => reason,
    };

    let steps = cfg.continuation_steps;
    if steps == 0 || problem.h_sup() == 0.0 {
        return Err(non_convergence(problem, newton, reason, start));
    }
    warn!("direct solve failed ({reason}); ramping H over {steps} steps");
    let mut u = u0;
    let mut last = None;
    for j in 1..=steps {
        let pj = problem.scaled_h(j as f64 / steps as f64)?;
        newton.report.continuation_steps = j;
        match newton.run(&pj, u.clone())? {
            Ok((uj, asm)) => {
                u = uj;
                last = Some(asm);
            }
            Err(r) => {
                let reason = format!("continuation step {j}/{steps}: {r}");
                return Err(non_convergence(problem, newton, reason, start));
            }
        }
    }
    let asm = last.expect("at least one continuation step");
    let rep = finish(problem, cfg, newton.report, &u, &asm, start);
    Ok((u, rep))
}

fn non_convergence(problem: &PmcProblem, newton: Newton<'_>, reason: String, start: Instant) -> PmcError {
    let (best, _) = newton
        .best
        .unwrap_or_else(|| (problem.boundary_extension_by_zero(), f64::INFINITY));
    let mut rep = newton.report;
    rep.converged = false;
    rep.sup_u = best.sup_norm();
    rep.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    PmcError::NonConvergence {
        reason,
        best: Box::new((best, rep)),
    }
}

/// Number of equispaced samples of the boundary circle used for smoothing.
pub const SMOOTHING_SAMPLES: usize = 4096;

/// Default largest index of a monotone sequence.
pub const DEFAULT_K_MAX: u32 = 16;

/// Monotone smooth approximations `φ_k^- ≤ φ ≤ φ_k^+` of continuous data on
/// the circle, for `1 ≤ k ≤ k_max`.
///
/// `S_k` is heat-kernel smoothing of width `δ_k = 1/(2k)` (Fourier
/// multiplier `exp(-m² δ_k² / 2)`), and `φ_k^± = S_k φ ± c_k` with
///
/// ```text
/// c_k = 1/k + Σ_{j=k}^{K-1} sup|S_j φ - S_{j+1} φ| + sup|S_K φ - φ|.
/// ```
///
/// The telescoping sum makes `φ_k^+` decreasing and `φ_k^-` increasing in
/// `k` and brackets `φ`; suprema are taken over the sample points.
#[derive(Clone, Debug)]
pub struct MonotoneSequence {
    k_max: u32,
    coeffs: Vec<Complex<f64>>,
    offsets: Vec<f64>,
    samples: Vec<f64>,
    deviation: Vec<f64>,
}

fn width(k: u32) -> f64 {
    0.5 / k as f64
}

fn multiplier(m: usize, k: u32) -> f64 {
    let d = width(k);
    (-(m as f64 * d).powi(2) / 2.0).exp()
}

impl MonotoneSequence {
    pub fn new(phi: impl Fn(f64) -> f64, k_max: u32) -> Result<Self> {
        if k_max < 1 {
            return Err(PmcError::OutOfRange("k_max must be >= 1".into()));
        }
        let m = SMOOTHING_SAMPLES;
        let samples: Vec<f64> = (0..m)
            .map(|i| phi(2.0 * std::f64::consts::PI * i as f64 / m as f64))
            .collect();
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(PmcError::InvalidProblem(format!(
                "boundary data is not finite at sample {i}"
            )));
        }
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let mut spec: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fwd.process(&mut spec);
        let scale = 1.0 / m as f64;
        for c in spec.iter_mut() {
            *c *= scale;
        }
        let smooth = |k: u32| -> Vec<f64> {
            let mut s: Vec<Complex<f64>> = spec
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let freq = if i <= m / 2 { i } else { m - i };
                    if i == m / 2 {
                        Complex::new(0.0, 0.0)
                    } else {
                        c * multiplier(freq, k)
                    }
                })
                .collect();
            inv.process(&mut s);
            s.iter().map(|c| c.re).collect()
        };
        let levels: Vec<Vec<f64>> = (1..=k_max).map(smooth).collect();
        let sup_diff = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
        };
        let kk = k_max as usize;
        let mut tail = vec![0.0; kk];
        tail[kk - 1] = sup_diff(&levels[kk - 1], &samples);
        for j in (0..kk - 1).rev() {
            tail[j] = tail[j + 1] + sup_diff(&levels[j], &levels[j + 1]);
        }
        let offsets: Vec<f64> = (0..kk).map(|j| 1.0 / (j + 1) as f64 + tail[j]).collect();
        let deviation: Vec<f64> = (0..kk)
            .map(|j| sup_diff(&levels[j], &samples) + offsets[j])
            .collect();
        Ok(MonotoneSequence {
            k_max,
            coeffs: spec,
            offsets,
            samples,
            deviation,
        })
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    fn check_k(&self, k: u32) -> Result<()> {
        if k < 1 || k > self.k_max {
            return Err(PmcError::OutOfRange(format!(
                "k = {k} outside 1..={}",
                self.k_max
            )));
        }
        Ok(())
    }

    /// `c_k`.
    pub fn offset(&self, k: u32) -> Result<f64> {
        self.check_k(k)?;
        Ok(self.offsets[k as usize - 1])
    }

    /// `S_k φ(θ)`, summed until the multiplier drops below `e^{-40}`.
    pub fn smoothed(&self, k: u32, theta: f64) -> Result<f64> {
        self.check_k(k)?;
        let m = self.coeffs.len();
        let lim = ((80.0f64).sqrt() / width(k)).ceil() as usize;
        let lim = lim.min(m / 2 - 1);
        let mut s = self.coeffs[0].re;
        for f in 1..=lim {
            let mult = multiplier(f, k);
            let e = Complex::from_polar(1.0, f as f64 * theta);
            // real data: c_{-f} = conj(c_f)
            s += 2.0 * mult * (self.coeffs[f] * e).re;
        }
        Ok(s)
    }

    pub fn upper(&self, k: u32, theta: f64) -> Result<f64> {
        Ok(self.smoothed(k, theta)? + self.offset(k)?)
    }

    pub fn lower(&self, k: u32, theta: f64) -> Result<f64> {
        Ok(self.smoothed(k, theta)? - self.offset(k)?)
    }

    /// `sup |φ_k^± - φ|` over the samples.
    pub fn deviation(&self, k: u32) -> Result<f64> {
        self.check_k(k)?;
        Ok(self.deviation[k as usize - 1])
    }

    pub fn raw_samples(&self) -> &[f64] {
        &self.samples
    }
}

/// `φ_k^±` as closures over the angle; the sequence is built with
/// `k_max = max(k, DEFAULT_K_MAX)`.
pub fn monotone_data_sequences(
    phi: impl Fn(f64) -> f64,
    k: u32,
) -> Result<(impl Fn(f64) -> f64, impl Fn(f64) -> f64)> {
    let seq = Arc::new(MonotoneSequence::new(phi, k.max(DEFAULT_K_MAX))?);
    seq.check_k(k)?;
    let lo = Arc::clone(&seq);
    let hi = seq;
    Ok((
        move |t: f64| lo.lower(k, t).expect("k checked"),
        move |t: f64| hi.upper(k, t).expect("k checked"),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandwichConfig {
    pub schedule: Vec<u32>,
    /// Allowed ordering violation.
    pub tolerance: f64,
}

impl Default for SandwichConfig {
    fn default() -> Self {
        SandwichConfig {
            schedule: vec![1, 2, 4, 8, 16],
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    /// `"lower <= upper"`.
    pub label: String,
    pub max_violation: f64,
    pub node: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCertificate {
    pub tolerance: f64,
    pub checks: Vec<OrderingCheck>,
    pub passed: bool,
}

impl OrderingCertificate {
    pub fn max_violation(&self) -> f64 {
        self.checks.iter().fold(0.0, |m, c| m.max(c.max_violation))
    }
}

/// Solutions for one data index `k` of the schedule.
#[derive(Clone, Debug)]
pub struct SandwichLevel {
    pub k: u32,
    /// Data `φ_k^-`, prescribed `H`.
    pub u_minus: GridFunction,
    /// Data `φ_k^+`, prescribed `H`.
    pub u_plus: GridFunction,
    /// Data `φ_k^-`, `H ≡ +H₀`.
    pub v_minus: GridFunction,
    /// Data `φ_k^+`, `H ≡ -H₀`.
    pub v_plus: GridFunction,
    pub reports: [SolveReport; 4],
}

#[derive(Clone, Debug)]
pub struct SandwichOutcome {
    pub u: GridFunction,
    pub report: SolveReport,
    pub certificate: OrderingCertificate,
    pub levels: Vec<SandwichLevel>,
}

/// Angle of every rim node of a disc grid.
fn rim_angles(problem: &PmcProblem) -> Result<Vec<(usize, f64)>> {
    let grid = problem.grid();
    if !(grid.has_pole() && grid.dim() == 2) {
        return Err(PmcError::InvalidProblem(
            "boundary smoothing needs a two-dimensional disc grid".into(),
        ));
    }
    Ok(grid.dirichlet_nodes().map(|p| (p, grid.coords(p)[1])).collect())
}

fn with_rim(problem: &PmcProblem, rim: &[(usize, f64)], f: impl Fn(f64) -> f64) -> Result<PmcProblem> {
    let mut b = vec![0.0; problem.grid().len()];
    for &(p, t) in rim {
        b[p] = f(t);
    }
    problem.with_boundary(b)
}

/// Comparison sandwich for continuous data on the rim of a disc grid.
///
/// For each `k` of the schedule it solves `u_k^±` (data `φ_k^±`, the
/// prescribed `H`) and the comparison problems `v_k^+` (data `φ_k^+`,
/// `H ≡ -H₀`) and `v_k^-` (data `φ_k^-`, `H ≡ +H₀`), `H₀ = sup|H|`. With the
/// orientation used here a smaller `Q` lies above, so both chains
/// `v_1^- ≤ … ≤ v_K^- ≤ v_K^+ ≤ … ≤ v_1^+` and `v_k^- ≤ u_k^± ≤ v_k^+` are
/// expected. The returned `u` solves the problem with the data `φ` itself and
/// is checked against `v_K^±` as well.
pub fn sandwich_solve(
    problem: &PmcProblem,
    phi: &(dyn Fn(f64) -> f64 + Sync),
    newton: &NewtonConfig,
    cfg: &SandwichConfig,
) -> Result<SandwichOutcome> {
    if cfg.schedule.is_empty() || cfg.schedule.windows(2).any(|w| w[0] >= w[1]) || cfg.schedule[0] < 1 {
        return Err(PmcError::InvalidProblem(
            "sandwich schedule must be non-empty and strictly increasing from k >= 1".into(),
        ));
    }
    let rim = rim_angles(problem)?;
    let k_max = *cfg.schedule.last().unwrap();
    let seq = MonotoneSequence::new(phi, k_max)?;
    let h0 = problem.h_sup();
    let hp = problem.with_constant_h(-h0)?;
    let hm = problem.with_constant_h(h0)?;

    let mut jobs = Vec::new();
    for &k in &cfg.schedule {
        let lo = |t: f64| seq.lower(k, t).expect("k in range");
        let hi = |t: f64| seq.upper(k, t).expect("k in range");
        jobs.push(with_rim(problem, &rim, lo)?);
        jobs.push(with_rim(problem, &rim, hi)?);
        jobs.push(with_rim(&hm, &rim, lo)?);
        jobs.push(with_rim(&hp, &rim, hi)?);
    }
    let direct = with_rim(problem, &rim, phi)?;
    jobs.push(direct);
    let mut solved: Vec<(GridFunction, SolveReport)> = jobs
        .par_iter()
        .map(|pb| solve_dirichlet(pb, newton))
        .collect::<Result<Vec<_>>>()?;

    let (u, report) = solved.pop().expect("direct solve");
    let mut levels = Vec::with_capacity(cfg.schedule.len());
    let mut it = solved.into_iter();
    for &k in &cfg.schedule {
        let (um, rm) = it.next().unwrap();
        let (up, rp) = it.next().unwrap();
        let (vm, rvm) = it.next().unwrap();
        let (vp, rvp) = it.next().unwrap();
        levels.push(SandwichLevel {
            k,
            u_minus: um,
            u_plus: up,
            v_minus: vm,
            v_plus: vp,
            reports: [rm, rp, rvm, rvp],
        });
    }

    let tol = cfg.tolerance;
    let mut checks = Vec::new();
    let mut check = |lo: &GridFunction, hi: &GridFunction, label: String| -> Result<()> {
        let c = comparison_check(lo, hi, tol)?;
        checks.push(OrderingCheck {
            label,
            max_violation: c.max_violation,
            node: c.node,
            passed: c.passed,
        });
        Ok(())
    };
    for w in levels.windows(2) {
        check(&w[0].v_minus, &w[1].v_minus, format!("v-[{}] <= v-[{}]", w[0].k, w[1].k))?;
        check(&w[1].v_plus, &w[0].v_plus, format!("v+[{}] <= v+[{}]", w[1].k, w[0].k))?;
    }
    for l in &levels {
        let k = l.k;
        check(&l.v_minus, &l.v_plus, format!("v-[{k}] <= v+[{k}]"))?;
        check(&l.v_minus, &l.u_minus, format!("v-[{k}] <= u-[{k}]"))?;
        check(&l.u_minus, &l.u_plus, format!("u-[{k}] <= u+[{k}]"))?;
        check(&l.u_plus, &l.v_plus, format!("u+[{k}] <= v+[{k}]"))?;
        check(&l.v_minus, &l.u_plus, format!("v-[{k}] <= u+[{k}]"))?;
        check(&l.u_minus, &l.v_plus, format!("u-[{k}] <= v+[{k}]"))?;
    }
    let last = levels.last().unwrap();
    check(&last.v_minus, &u, format!("v-[{}] <= u", last.k))?;
    check(&u, &last.v_plus, format!("u <= v+[{}]", last.k))?;

    let passed = checks.iter().all(|c| c.passed);
    let certificate = OrderingCertificate {
        tolerance: tol,
        checks,
        passed,
    };
    if !passed {
        let worst = certificate
            .checks
            .iter()
            .filter(|c| !c.passed)
            .max_by(|a, b| a.max_violation.total_cmp(&b.max_violation))
            .unwrap();
        return Err(PmcError::OrderingViolation {
            label: worst.label.clone(),
            violation: worst.max_violation,
            node: worst.node,
        });
    }
    Ok(SandwichOutcome {
        u,
        report,
        certificate,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_chart, ChartKind, ChartParams};
    use crate::mesh::Grid;
    use std::f64::consts::PI;

    fn disc(kind: ChartKind, r: f64, nr: usize, nt: usize) -> Arc<Grid> {
        let c = make_chart(kind, 2, &ChartParams::disc(r)).unwrap();
        Arc::new(Grid::new(Arc::new(c), &[nr, nt]).unwrap())
    }

    #[test]
    fn trivial_problem_one_iteration() {
        let g = disc(ChartKind::Euclidean, 1.0, 17, 16);
        let pb = PmcProblem::new(g, |_| 0.0, |_| 0.0).unwrap();
        let (u, rep) = solve_dirichlet(&pb, &NewtonConfig::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert!(u.sup_norm() == 0.0);
    }

    #[test]
    fn constant_data_stays_constant() {
        let g = disc(ChartKind::HyperbolicPolar, 1.0, 17, 16);
        let pb = PmcProblem::new(g, |_| 0.0, |_| 0.7).unwrap();
        let (u, rep) = solve_dirichlet(&pb, &NewtonConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(u.values().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn residual_history_non_increasing() {
        let g = disc(ChartKind::HyperbolicPolar, 1.0, 17, 32);
        let pb = PmcProblem::new(g, |_| 0.5, |x| x[1].sin()).unwrap();
        let (_, rep) = solve_dirichlet(&pb, &NewtonConfig::default()).unwrap();
        assert!(rep.converged);
        for w in rep.residual_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = NewtonConfig::default();
        c.tolerance = 0.0;
        assert!(c.validate().is_err());
        let mut c = NewtonConfig::default();
        c.max_iterations = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_data_sequence() {
        let seq = MonotoneSequence::new(|_| 2.0, 8).unwrap();
        for k in 1..=8 {
            assert!((seq.upper(k, 0.3).unwrap() - (2.0 + 1.0 / k as f64)).abs() < 1e-12);
            assert!((seq.lower(k, 1.3).unwrap() - (2.0 - 1.0 / k as f64)).abs() < 1e-12);
        }
        let (lo, hi) = monotone_data_sequences(|_| -1.0, 4).unwrap();
        assert!((lo(0.0) + 1.25).abs() < 1e-12 && (hi(2.0) + 0.75).abs() < 1e-12);
    }

    #[test]
    fn sine_sequence_is_ordered() {
        let seq = MonotoneSequence::new(f64::sin, 16).unwrap();
        for i in 0..1000 {
            let t = 2.0 * PI * (i as f64 + 0.37) / 1000.0;
            let mut prev_hi = f64::INFINITY;
            let mut prev_lo = f64::NEG_INFINITY;
            for k in 1..=16 {
                let hi = seq.upper(k, t).unwrap();
                let lo = seq.lower(k, t).unwrap();
                assert!(lo <= t.sin() && t.sin() <= hi);
                assert!(hi < prev_hi && lo > prev_lo);
                prev_hi = hi;
                prev_lo = lo;
            }
        }
        assert!(seq.deviation(8).unwrap() < 0.2);
        assert!(seq.offset(17).is_err());
    }

    #[test]
    fn sawtooth_deviation_bound() {
        // triangle wave with Lipschitz constant 1
        let saw = |t: f64| {
            let x = t.rem_euclid(2.0 * PI) / PI;
            if x < 1.0 {
                x * PI - PI / 2.0
            } else {
                (2.0 - x) * PI - PI / 2.0
            }
        };
        let seq = MonotoneSequence::new(saw, 16).unwrap();
        for k in 1..=16u32 {
            assert!(seq.deviation(k).unwrap() <= 2.0 / k as f64, "k={k}");
        }
    }

    #[test]
    fn non_finite_data_rejected() {
        assert!(MonotoneSequence::new(|t| if t > 1.0 { f64::NAN } else { 0.0 }, 4).is_err());
    }
}
