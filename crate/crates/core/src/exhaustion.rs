//! Exhaustion of the hyperbolic plane by geodesic discs `Ω_k`.
//!
//! For each `k` of the schedule the Dirichlet problem is solved on
//! `ρ ≤ ρ_k` with the radially constant extension `F(ρ, θ) = φ(θ)` of the
//! asymptotic data on the rim. Every solve is checked against the barriers
//! `±v_k` and the height bound `M₀ + Cπ`, and successive solutions are
//! compared on fixed compact discs `Ω̄_m`.

use std::io::Write;
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::barriers::{self, barrier_diagnostics, BarrierSpec};
use crate::error::{PmcError, Result};
use crate::geometry::{make_chart, ChartKind, ChartParams, RadialProfile};
use crate::mesh::{Grid, GridFunction, NodeKind};
use crate::operator::PmcProblem;
use crate::solver::{solve_dirichlet, MonotoneSequence, NewtonConfig, SolveReport, SMOOTHING_SAMPLES};

pub type AngularData = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Grid density of the disc grids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Resolution {
    /// Radial intervals per unit of `ρ`.
    pub radial_per_unit: f64,
    /// Angular nodes per unit of rim arc length `sinh ρ_k · 2π`.
    pub rim_per_unit: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution {
            radial_per_unit: 64.0,
            rim_per_unit: 32.0,
        }
    }
}

impl Resolution {
    pub fn with_radial(radial_per_unit: f64) -> Self {
        Resolution {
            radial_per_unit,
            rim_per_unit: radial_per_unit / 2.0,
        }
    }

    /// `(radial nodes, angular nodes)`, the latter a multiple of 8.
    pub fn counts(&self, rho: f64) -> (usize, usize) {
        let nr = (self.radial_per_unit * rho).ceil().max(4.0) as usize + 1;
        let arc = 2.0 * std::f64::consts::PI * rho.sinh() * self.rim_per_unit;
        let nt = (8.0 * (arc / 8.0).ceil()).max(16.0) as usize;
        (nr, nt)
    }
}

/// Hyperbolic disc grid of radius `rho` around the pole.
pub fn hyperbolic_disc_grid(rho: f64, nr: usize, nt: usize) -> Result<Arc<Grid>> {
    let chart = make_chart(ChartKind::HyperbolicPolar, 2, &ChartParams::disc(rho))?;
    Ok(Arc::new(Grid::new(Arc::new(chart), &[nr, nt])?))
}

/// Grid on `Ω_k` at the given resolution.
pub fn exhaustion_grid(k: u32, res: &Resolution) -> Result<Arc<Grid>> {
    let rho = barriers::rho_k(k)?;
    let (nr, nt) = res.counts(rho);
    hyperbolic_disc_grid(rho, nr, nt)
}

/// Rim values `F = φ(θ)` on the Dirichlet nodes of a disc grid and
/// `M₀ = sup|φ|`, the supremum being taken over the rim nodes and a fine
/// sampling of the circle.
pub fn extend_boundary_data(phi: &dyn Fn(f64) -> f64, grid: &Grid) -> (Vec<f64>, f64) {
    let mut b = vec![0.0; grid.len()];
    let mut m0 = 0.0f64;
    for p in grid.dirichlet_nodes() {
        let v = phi(grid.coords(p)[1]);
        b[p] = v;
        m0 = m0.max(v.abs());
    }
    for i in 0..SMOOTHING_SAMPLES {
        let t = 2.0 * std::f64::consts::PI * i as f64 / SMOOTHING_SAMPLES as f64;
        m0 = m0.max(phi(t).abs());
    }
    (b, m0)
}

#[derive(Clone)]
pub struct AsymptoticProblem {
    pub phi: AngularData,
    pub h: ScalarField,
    pub schedule: Vec<u32>,
    pub resolution: Resolution,
    /// Indices `m` of the monitored compact discs `Ω̄_m`.
    pub monitored: Vec<u32>,
    /// `s_m` threshold for declaring numerical convergence.
    pub tolerance: f64,
    pub margin_factor: f64,
    /// Smooth `φ` once, with index `k`, before extending it.
    pub mollify: Option<u32>,
    /// Slack allowed in the height and barrier checks.
    pub height_tolerance: f64,
}

impl std::fmt::Debug for AsymptoticProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AsymptoticProblem")
            .field("schedule", &self.schedule)
            .field("resolution", &self.resolution)
            .field("monitored", &self.monitored)
            .field("tolerance", &self.tolerance)
            .finish_non_exhaustive()
    }
}

impl AsymptoticProblem {
    pub fn new(phi: AngularData, h: ScalarField) -> Self {
        AsymptoticProblem {
            phi,
            h,
            schedule: (2..=8).collect(),
            resolution: Resolution::default(),
            monitored: vec![2],
            tolerance: 1e-3,
            margin_factor: barriers::DEFAULT_MARGIN,
            mollify: None,
            height_tolerance: 1e-6,
        }
    }

    pub fn constant_h(phi: AngularData, h: f64) -> Self {
        Self::new(phi, Arc::new(move |_| h))
    }

    fn validate(&self) -> Result<()> {
        if self.schedule.is_empty()
            || self.schedule[0] < 2
            || self.schedule.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(PmcError::InvalidProblem(
                "k-schedule must be strictly increasing and start at k >= 2".into(),
            ));
        }
        let k_last = *self.schedule.last().unwrap();
        if let Some(&m) = self.monitored.iter().find(|&&m| m < 2 || m >= k_last) {
            return Err(PmcError::InvalidProblem(format!(
                "monitored disc m = {m} must satisfy 2 <= m < {k_last}"
            )));
        }
        if !(self.resolution.radial_per_unit > 0.0 && self.resolution.rim_per_unit > 0.0) {
            return Err(PmcError::InvalidProblem("resolution must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscSolve {
    pub k: u32,
    pub rho_k: f64,
    pub counts: Vec<usize>,
    pub report: SolveReport,
    pub grad_origin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonitorSeries {
    pub m: u32,
    pub rho_m: f64,
    /// `k` of each entry; `s[i] = sup_{Ω̄_m} |u_{k[i]} - u_{next k}|`.
    pub k: Vec<u32>,
    pub s: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExhaustionReport {
    #[serde(rename = "H0")]
    pub h0: f64,
    #[serde(rename = "M0")]
    pub m0: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub height_bound: f64,
    pub max_height: f64,
    pub max_barrier_violation: f64,
    pub grad_origin_history: Vec<f64>,
    pub solves: Vec<DiscSolve>,
    pub differences: Vec<MonitorSeries>,
    pub converged_numerically: bool,
    /// Places where `s_m` increased although `k ≥ m + 1`.
    pub anomalies: Vec<String>,
    #[serde(skip)]
    pub solutions: Vec<GridFunction>,
}

impl ExhaustionReport {
    pub fn final_solution(&self) -> &GridFunction {
        self.solutions.last().expect("at least one solve")
    }

    /// The solution of the largest disc restricted to the largest monitored
    /// disc `Ω̄_m`, resampled at the same spacing.
    pub fn monitored_solution(&self) -> Result<GridFunction> {
        let u = self.final_solution();
        let Some(rho) = self.differences.iter().map(|d| d.rho_m).reduce(f64::max) else {
            return Ok(u.clone());
        };
        let grid = u.grid();
        let nr = (rho / grid.spacing()[0]).ceil() as usize + 1;
        let g = hyperbolic_disc_grid(rho, nr.max(3), grid.counts()[1])?;
        let values = (0..g.len())
            .map(|p| match g.kind(p) {
                NodeKind::Pole => Ok(u.get(0)),
                _ => u.interpolate(&g.coords(p)),
            })
            .collect::<Result<Vec<f64>>>()?;
        GridFunction::new(g, values)
    }

    /// `max/min` of `|∇u_k(o)|` over the schedule.
    pub fn grad_origin_ratio(&self) -> f64 {
        let mx = self.grad_origin_history.iter().cloned().fold(0.0, f64::max);
        let mn = self.grad_origin_history.iter().cloned().fold(f64::INFINITY, f64::min);
        if mx == 0.0 {
            1.0
        } else {
            mx / mn
        }
    }

    /// Fails when some `s_m` is not strictly decreasing over its last three
    /// entries.
    pub fn check_monotone(&self) -> Result<()> {
        for series in &self.differences {
            let s = &series.s;
            if s.len() >= 3 {
                let t = &s[s.len() - 3..];
                if !(t[0] > t[1] && t[1] > t[2]) && t[0].max(t[1]).max(t[2]) > 0.0 {
                    return Err(PmcError::NonDecreasingDifferences {
                        m: series.m,
                        history: s.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Polar lattice of `Ω̄_m` on which successive solutions are compared.
pub const MONITOR_RADIAL: usize = 33;
pub const MONITOR_ANGULAR: usize = 64;

fn sup_difference(a: &GridFunction, b: &GridFunction, rho: f64) -> Result<f64> {
    let mut s = 0.0f64;
    for i in 0..MONITOR_RADIAL {
        let r = rho * i as f64 / (MONITOR_RADIAL - 1) as f64;
        for j in 0..MONITOR_ANGULAR {
            let t = 2.0 * std::f64::consts::PI * j as f64 / MONITOR_ANGULAR as f64;
            s = s.max((a.interpolate(&[r, t])? - b.interpolate(&[r, t])?).abs());
        }
    }
    Ok(s)
}

pub fn solve_asymptotic(ap: &AsymptoticProblem, cfg: &NewtonConfig) -> Result<ExhaustionReport> {
    ap.validate()?;
    let phi: AngularData = match ap.mollify {
        Some(k) => {
            let seq = Arc::new(MonotoneSequence::new(|t| (ap.phi)(t), k)?);
            Arc::new(move |t| seq.smoothed(k, t).expect("index within range"))
        }
        None => Arc::clone(&ap.phi),
    };
    let grids: Vec<Arc<Grid>> = ap
        .schedule
        .iter()
        .map(|&k| exhaustion_grid(k, &ap.resolution))
        .collect::<Result<_>>()?;

    let last = grids.last().unwrap();
    let h0 = (0..last.len()).fold(0.0f64, |m, p| m.max((ap.h)(&last.coords(p)).abs()));
    let c = barriers::choose_c(h0, ap.margin_factor)?.max(barriers::MIN_SLOPE);
    let (_, m0) = extend_boundary_data(&*phi, last);
    info!("exhaustion: H0 = {h0}, M0 = {m0}, C = {c}");

    let solved: Vec<(DiscSolve, GridFunction)> = ap
        .schedule
        .par_iter()
        .zip(grids.par_iter())
        .map(|(&k, grid)| -> Result<(DiscSolve, GridFunction)> {
            let (bvals, _) = extend_boundary_data(&*phi, grid);
            let hvals = (0..grid.len()).map(|p| (ap.h)(&grid.coords(p))).collect();
            let problem = PmcProblem::from_values(Arc::clone(grid), hvals, bvals)?;
            let (u, mut report) = solve_dirichlet(&problem, cfg)?;
            let spec = BarrierSpec::new(2, k, m0, c)?;
            let diag = barrier_diagnostics(&spec, &u)?;
            report.barrier = Some(diag);
            let sup = u.sup_norm();
            if sup > spec.height_bound() + ap.height_tolerance {
                return Err(PmcError::HeightBoundViolation {
                    k,
                    sup_u: sup,
                    bound: spec.height_bound(),
                });
            }
            let grad_origin = u.gradient_norm(0)?;
            info!("k = {k}: {} iterations, sup|u| = {sup:.6}", report.iterations);
            Ok((
                DiscSolve {
                    k,
                    rho_k: spec.rho_k,
                    counts: grid.counts().to_vec(),
                    report,
                    grad_origin,
                },
                u,
            ))
        })
        .collect::<Result<_>>()?;
    let (solves, solutions): (Vec<DiscSolve>, Vec<GridFunction>) = solved.into_iter().unzip();

    let mut differences = Vec::new();
    let mut anomalies = Vec::new();
    for &m in &ap.monitored {
        let rho_m = barriers::rho_k(m)?;
        let mut ks = Vec::new();
        let mut s = Vec::new();
        for i in 0..solves.len() - 1 {
            if solves[i].k < m {
                continue;
            }
            ks.push(solves[i].k);
            s.push(sup_difference(&solutions[i], &solutions[i + 1], rho_m)?);
        }
        for i in 1..s.len() {
            if ks[i - 1] > m && s[i] > s[i - 1] {
                anomalies.push(format!(
                    "s_{m} increased from {:e} (k = {}) to {:e} (k = {})",
                    s[i - 1], ks[i - 1], s[i], ks[i]
                ));
            }
        }
        differences.push(MonitorSeries { m, rho_m, k: ks, s });
    }
    let converged_numerically = differences
        .iter()
        .all(|d| d.s.last().is_some_and(|&v| v <= ap.tolerance));

    let max_height = solutions.iter().fold(0.0f64, |m, u| m.max(u.sup_norm()));
    let max_barrier_violation = solves
        .iter()
        .filter_map(|s| s.report.barrier.map(|b| b.max_violation))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ExhaustionReport {
        h0,
        m0,
        c,
        height_bound: m0 + c * std::f64::consts::PI,
        max_height,
        max_barrier_violation,
        grad_origin_history: solves.iter().map(|s| s.grad_origin).collect(),
        solves,
        differences,
        converged_numerically,
        anomalies,
        solutions,
    })
}

/// Writes the graph of `u` over a disc grid as an OBJ triangle mesh.
///
/// Vertices are `(X, Y, u)` with `(X, Y)` the Beltrami–Klein image
/// `tanh ρ (cos θ, sin θ)` on hyperbolic charts and `ρ (cos θ, sin θ)` on
/// Euclidean ones.
pub fn write_obj<W: Write>(u: &GridFunction, mut out: W) -> Result<()> {
    let grid = u.grid();
    if !(grid.has_pole() && grid.dim() == 2) {
        return Err(PmcError::InvalidGrid("OBJ output needs a disc grid with a pole".into()));
    }
    let hyperbolic = grid.chart().radial_profile() == Some(RadialProfile::Hyperbolic);
    let (nr, nt) = (grid.counts()[0], grid.counts()[1]);
    writeln!(out, "# graph of a Killing graph solution over a geodesic disc")?;
    if hyperbolic {
        writeln!(out, "# vertex = (tanh(rho) cos(theta), tanh(rho) sin(theta), u): Beltrami-Klein disc")?;
    } else {
        writeln!(out, "# vertex = (rho cos(theta), rho sin(theta), u)")?;
    }
    writeln!(out, "# rings: {}, angular nodes: {}", nr - 1, nt)?;
    writeln!(out, "v 0 0 {:.16e}", u.get(0))?;
    for i in 1..nr {
        for j in 0..nt {
            let p = grid.node_at(&[i, j]);
            let x = grid.coords(p);
            let r = if hyperbolic { x[0].tanh() } else { x[0] };
            writeln!(
                out,
                "v {:.16e} {:.16e} {:.16e}",
                r * x[1].cos(),
                r * x[1].sin(),
                u.get(p)
            )?;
        }
    }
    // OBJ indices start at 1; vertex (i, j) has index 2 + (i-1) nt + j
    let vid = |i: usize, j: usize| 2 + (i - 1) * nt + (j % nt);
    for j in 0..nt {
        writeln!(out, "f 1 {} {}", vid(1, j), vid(1, j + 1))?;
    }
    for i in 1..nr - 1 {
        for j in 0..nt {
            let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            writeln!(out, "f {a} {b} {c}")?;
            writeln!(out, "f {a} {c} {d}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_counts() {
        let r = Resolution::default();
        let (nr, nt) = r.counts(barriers::rho_k(2).unwrap());
        assert_eq!(nr, 37);
        assert_eq!(nt % 8, 0);
        assert!(nt >= 112);
    }

    #[test]
    fn extension_examples() {
        let g = exhaustion_grid(2, &Resolution::with_radial(16.0)).unwrap();
        let (b, m0) = extend_boundary_data(&|_| 0.0, &g);
        assert!(b.iter().all(|&v| v == 0.0) && m0 == 0.0);
        let (b, m0) = extend_boundary_data(&f64::sin, &g);
        assert!((m0 - 1.0).abs() < 1e-12);
        for p in g.dirichlet_nodes() {
            assert_eq!(b[p], g.coords(p)[1].sin());
        }
        let pl = |t: f64| {
            let x = t / std::f64::consts::PI;
            if x < 1.0 {
                0.3 * x
            } else {
                0.3 * (2.0 - x)
            }
        };
        let (_, m0) = extend_boundary_data(&pl, &g);
        assert!((m0 - 0.3).abs() < 1e-12);
    }

    #[test]
    fn constant_data_is_exact() {
        let mut ap = AsymptoticProblem::constant_h(Arc::new(|_| 0.4), 0.0);
        ap.schedule = vec![2, 3, 4];
        ap.resolution = Resolution::with_radial(16.0);
        let rep = solve_asymptotic(&ap, &NewtonConfig::default()).unwrap();
        for u in &rep.solutions {
            assert!(u.values().iter().all(|v| (v - 0.4).abs() < 1e-12));
        }
        assert!(rep.differences[0].s.iter().all(|&s| s < 1e-12));
        assert!(rep.converged_numerically);
        let m = rep.monitored_solution().unwrap();
        assert!((m.grid().chart().axes()[0].upper - barriers::rho_k(2).unwrap()).abs() < 1e-15);
        assert!(m.values().iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn obj_output() {
        let g = exhaustion_grid(2, &Resolution::with_radial(8.0)).unwrap();
        let u = GridFunction::from_fn(g.clone(), |x| x[0]);
        let mut buf = Vec::new();
        write_obj(&u, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let (nr, nt) = (g.counts()[0], g.counts()[1]);
        assert_eq!(s.lines().filter(|l| l.starts_with("v ")).count(), 1 + (nr - 1) * nt);
        assert_eq!(
            s.lines().filter(|l| l.starts_with("f ")).count(),
            nt + 2 * nt * (nr - 2)
        );
    }

    #[test]
    fn invalid_schedules() {
        let mut ap = AsymptoticProblem::constant_h(Arc::new(f64::sin), 0.0);
        ap.schedule = vec![3, 2];
        assert!(solve_asymptotic(&ap, &NewtonConfig::default()).is_err());
        let mut ap = AsymptoticProblem::constant_h(Arc::new(f64::sin), 1.0);
        ap.schedule = vec![2, 3];
        assert!(solve_asymptotic(&ap, &NewtonConfig::default()).is_err());
    }
}
