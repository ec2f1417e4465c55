//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! fails if any of them fails.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use pmc_core::barriers::{self, BarrierSpec};
use pmc_core::exhaustion::{self, AsymptoticProblem, ExhaustionReport, Resolution};
use pmc_core::geometry::{make_chart, ChartKind, ChartParams};
use pmc_core::mesh::{Grid, GridFunction};
use pmc_core::operator::{jacobian, residual, PmcProblem};
use pmc_core::solver::{sandwich_solve, solve_dirichlet, NewtonConfig, SandwichConfig};
use pmc_core::verify::{comparison_check, oracle_max_deviation, GradientBoundCertificate};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn disc(kind: ChartKind, r: f64, nr: usize, nt: usize) -> Arc<Grid> {
    let c = make_chart(kind, 2, &ChartParams::disc(r)).unwrap();
    Arc::new(Grid::new(Arc::new(c), &[nr, nt]).unwrap())
}

fn within(t: Duration, limit: f64) -> bool {
    t.as_secs_f64() < limit
}

fn minimal_triviality() -> Outcome {
    let cfg = NewtonConfig::default();
    let mut ok = true;
    let mut notes = Vec::new();
    let square = {
        let c = make_chart(ChartKind::Euclidean, 2, &ChartParams::with_bounds(vec![(-1.0, 1.0); 2])).unwrap();
        Arc::new(Grid::new(Arc::new(c), &[65, 65]).unwrap())
    };
    let grids = [
        ("euclidean square", square),
        ("euclidean disc", disc(ChartKind::Euclidean, 1.0, 65, 64)),
        ("hyperbolic disc", disc(ChartKind::HyperbolicPolar, 1.0, 65, 64)),
    ];
    for (name, g) in grids {
        let t = Instant::now();
        let pb = PmcProblem::new(g, |_| 0.0, |_| 0.0).unwrap();
        let (u, rep) = solve_dirichlet(&pb, &cfg).unwrap();
        let el = t.elapsed();
        let good = rep.converged && u.sup_norm() <= 1e-12 && rep.iterations <= 2 && within(el, 1.0);
        ok &= good;
        notes.push(format!(
            "{name}: sup|u| = {:.1e}, {} it, {:.0} ms",
            u.sup_norm(),
            rep.iterations,
            el.as_secs_f64() * 1e3
        ));
    }
    outcome(ok, notes.join("; "))
}

fn cap(x: &[f64]) -> f64 {
    (1.0 - x[0] * x[0]).sqrt()
}

fn cap_problem(nr: usize, nt: usize) -> PmcProblem {
    let g = disc(ChartKind::Euclidean, 0.5, nr, nt);
    PmcProblem::new(g, |_| -1.0, cap).unwrap()
}

fn spherical_cap(sols: &[(PmcProblem, GridFunction)], elapsed: Duration) -> Outcome {
    let err = |u: &GridFunction| {
        let g = u.grid();
        (0..g.len()).fold(0.0f64, |m, p| m.max((u.get(p) - cap(&g.coords(p))).abs()))
    };
    let (e1, e2) = (err(&sols[0].1), err(&sols[1].1));
    let ratio = e1 / e2;
    outcome(
        e2 <= 5e-4 && (3.5..=4.5).contains(&ratio) && within(elapsed, 30.0),
        format!(
            "err(65) = {e1:.3e}, err(129) = {e2:.3e}, ratio = {ratio:.3}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Radial `Q` of `v = M₀ + h(ρ_k - ρ)` computed from the general graph
/// operator on the hyperbolic polar metric, with `γ = sech²ρ`.
fn radial_q_reference(n: usize, rho: f64, dh: f64, d2h: f64) -> f64 {
    let gamma = 1.0 / rho.cosh().powi(2);
    let dgamma = -2.0 * rho.tanh() * gamma;
    let (u1, u11) = (-dh, d2h);
    let w2 = gamma + u1 * u1;
    let a_rr = 1.0 - u1 * u1 / w2;
    // σ^{θθ} u_{θ;θ} = -σ^{θθ} Γ^ρ_θθ u_ρ = coth ρ · u_ρ for each angular direction
    let trace = a_rr * u11 + (n as f64 - 1.0) * u1 / rho.tanh();
    let r = 1.0 / (2.0 * w2) + 1.0 / (2.0 * gamma);
    (trace - r * dgamma * u1) / w2.sqrt()
}

fn barrier_identities() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_ident, mut worst_q) = (0.0f64, 0.0f64);
    for k in 2..=10 {
        for n in [2, 3] {
            for c in [0.5, 0.75, 1.0, 2.0] {
                let s = BarrierSpec::new(n, k, 1.0, c).unwrap();
                for _ in 0..50 {
                    let rho = rng.random_range(1e-3..=s.rho_k);
                    let dh = barriers::barrier_dh(&s, rho).unwrap();
                    let d2h = barriers::barrier_d2h(&s, rho).unwrap();
                    worst_ident = worst_ident.max((d2h - rho.tanh() * dh).abs());
                    let hk = barriers::hyperbolic_cylinder_curvature(n, rho);
                    let target = -(c / (1.0 + c * c).sqrt()) * n as f64 * hk;
                    let q_ref = radial_q_reference(n, rho, dh, d2h);
                    let q = barriers::q_radial(&s, rho, 0.0).unwrap().q;
                    worst_q = worst_q.max((q_ref - target).abs()).max((q - target).abs());
                }
            }
        }
    }
    let hk_ok = [2usize, 3].iter().all(|&n| (2..=1_000_000u32).all(|k| barriers::h_k_closed_form(n, k) > 1.0));
    let el = t.elapsed();
    outcome(
        worst_ident <= 1e-12 && worst_q <= 1e-10 && hk_ok && within(el, 5.0),
        format!(
            "max|h''-κh'| = {worst_ident:.1e}, max|Q+C/√(1+C²)nH_k| = {worst_q:.1e}, H_k>1 up to 1e6: {hk_ok}, {:.2} s",
            el.as_secs_f64()
        ),
    )
}

fn random_trig(rng: &mut ChaCha8Rng) -> [f64; 7] {
    let mut a = [0.0; 7];
    for v in a.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    a
}

fn eval_trig(a: &[f64; 7], t: f64) -> f64 {
    a[0] + (1..=3)
        .map(|m| a[2 * m - 1] * (m as f64 * t).cos() + a[2 * m] * (m as f64 * t).sin())
        .sum::<f64>()
}

fn comparison_suite() -> Outcome {
    let t = Instant::now();
    let cfg = NewtonConfig::default();
    let g = disc(ChartKind::HyperbolicPolar, barriers::rho_k(2).unwrap(), 33, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pairs: Vec<([f64; 7], f64, f64, f64)> = (0..20)
        .map(|_| {
            (
                random_trig(&mut rng),
                rng.random_range(0.0..0.3),
                rng.random_range(0.0..0.3),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let worst = pairs
        .par_iter()
        .map(|(a, c, d, t0)| {
            let lo = PmcProblem::new(g.clone(), |_| 0.3, |x| eval_trig(a, x[1])).unwrap();
            let hi = PmcProblem::new(g.clone(), |_| 0.3, |x| eval_trig(a, x[1]) + c + d * (1.0 + (x[1] - t0).cos())).unwrap();
            let (u1, r1) = solve_dirichlet(&lo, &cfg).unwrap();
            let (u2, r2) = solve_dirichlet(&hi, &cfg).unwrap();
            assert!(r1.converged && r2.converged);
            comparison_check(&u1, &u2, 1e-8).unwrap()
        })
        .collect::<Vec<_>>();
    let pairs_ok = worst.iter().all(|c| c.passed);
    let max_violation = worst.iter().fold(f64::NEG_INFINITY, |m, c| m.max(c.max_violation));

    let pb = PmcProblem::new(g.clone(), |_| 0.3, |x| x[1].sin().abs()).unwrap();
    let phi = |t: f64| t.sin().abs();
    let sandwich = sandwich_solve(&pb, &phi, &cfg, &SandwichConfig::default());
    let (sw_ok, sw_note) = match &sandwich {
        Ok(o) => (o.certificate.passed, format!("sandwich max violation {:.1e}", o.certificate.max_violation())),
        Err(e) => (false, format!("sandwich failed: {e}")),
    };
    let el = t.elapsed();
    outcome(
        pairs_ok && sw_ok && within(el, 120.0),
        format!(
            "20 pairs max(u1-u2) = {max_violation:.1e}, {sw_note}, {:.1} s",
            el.as_secs_f64()
        ),
    )
}

fn exhaustion_problem(res: Resolution, schedule: Vec<u32>) -> AsymptoticProblem {
    let mut ap = AsymptoticProblem::constant_h(Arc::new(f64::sin), 0.5);
    ap.schedule = schedule;
    ap.resolution = res;
    ap
}

fn asymptotic_exhaustion(rep: &ExhaustionReport, elapsed: Duration) -> Outcome {
    let all_converged = rep.solves.iter().all(|s| s.report.converged);
    let bound = 1.0 + barriers::choose_c(0.5, barriers::DEFAULT_MARGIN).unwrap() * PI + 1e-6;
    let s2 = &rep.differences[0];
    let decreasing = s2
        .k
        .iter()
        .zip(&s2.s)
        .collect::<Vec<_>>()
        .windows(2)
        .filter(|w| *w[0].0 >= 3)
        .all(|w| w[1].1 < w[0].1);
    let g = &rep.grad_origin_history;
    let grad_ok = g.iter().cloned().fold(0.0, f64::max) <= 10.0 * g[0];
    outcome(
        all_converged && rep.max_height <= bound && decreasing && grad_ok && within(elapsed, 600.0),
        format!(
            "converged: {all_converged}, sup|u_k| = {:.4} <= {bound:.4}, s_2 = {:?}, |∇u(o)| ratio = {:.3}, {:.0} s",
            rep.max_height,
            s2.s.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>(),
            rep.grad_origin_ratio(),
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle_closure(caps: &[(PmcProblem, GridFunction)], coarse: &GridFunction, fine: &GridFunction) -> Outcome {
    let d1 = oracle_max_deviation(&caps[0].0, &caps[0].1).unwrap().max_deviation;
    let d2 = oracle_max_deviation(&caps[1].0, &caps[1].1).unwrap().max_deviation;
    let hyp = |u: &GridFunction| {
        let pb = PmcProblem::new(u.grid().clone(), |_| 0.5, |x| x[1].sin()).unwrap();
        oracle_max_deviation(&pb, u).unwrap().max_deviation
    };
    let (e1, e2) = (hyp(coarse), hyp(fine));
    let (rc, re) = (d1 / d2, e1 / e2);
    let ok = d2 <= 5e-3 && e2 <= 5e-3 && (3.5..=4.5).contains(&rc) && (3.5..=4.5).contains(&re);
    outcome(
        ok,
        format!(
            "cap: {d1:.2e} -> {d2:.2e} (ratio {rc:.2}); exhaustion k=8: {e1:.2e} -> {e2:.2e} (ratio {re:.2})"
        ),
    )
}

fn smooth_state(grid: &Arc<Grid>, rng: &mut ChaCha8Rng) -> GridFunction {
    let c: Vec<f64> = (0..8).map(|_| rng.random_range(-0.6..0.6)).collect();
    GridFunction::from_fn(grid.clone(), |x| {
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let z: Vec<f64> = x.iter().map(|v| v.cos()).collect();
        c[0] + c[1] * y[0] + c[2] * z[1 % x.len()] + c[3] * y[0] * z[0] + c[4] * y[x.len() - 1] * y[0]
            + c[5] * (x[0] * x[0])
            + c[6] * z[x.len() - 1]
            + c[7] * y[0] * y[0]
    })
}

fn jacobian_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let charts: Vec<(&str, Arc<Grid>)> = vec![
        ("euclidean", {
            let c = make_chart(ChartKind::Euclidean, 2, &ChartParams::with_bounds(vec![(-1.0, 1.0); 2])).unwrap();
            Arc::new(Grid::new(Arc::new(c), &[12, 12]).unwrap())
        }),
        ("euclidean_polar", disc(ChartKind::Euclidean, 1.0, 12, 16)),
        ("hyperbolic_polar", disc(ChartKind::HyperbolicPolar, 1.3, 12, 16)),
        ("hyperbolic_polar_3d", {
            let params = ChartParams::with_bounds(vec![(0.3, 1.2), (0.4, 2.6), (0.0, 2.0 * PI)]);
            let c = make_chart(ChartKind::HyperbolicPolar, 3, &params).unwrap();
            Arc::new(Grid::new(Arc::new(c), &[7, 7, 8]).unwrap())
        }),
        ("rotational", {
            let c = make_chart(ChartKind::Rotational, 2, &ChartParams::default()).unwrap();
            Arc::new(Grid::new(Arc::new(c), &[12, 12]).unwrap())
        }),
    ];
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for (name, g) in charts {
        let mut chart_worst = 0.0f64;
        for _ in 0..10 {
            let u = smooth_state(&g, &mut rng);
            let hc: f64 = rng.random_range(-0.5..0.5);
            let pb = PmcProblem::from_values(
                g.clone(),
                (0..g.len()).map(|p| hc * (1.0 + 0.3 * g.coords(p)[0].sin())).collect(),
                u.values().to_vec(),
            )
            .unwrap();
            let j = jacobian(&pb, &u).unwrap();
            let v: Vec<f64> = (0..g.num_unknowns()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let jv = j.matvec(&v);
            let eps = 1e-6;
            let shifted = |s: f64| {
                let mut w = u.clone();
                let x: Vec<f64> = u.unknown_values().iter().zip(&v).map(|(a, b)| a + s * b).collect();
                w.set_unknowns(&x);
                residual(&pb, &w).unwrap()
            };
            let (fp, fm) = (shifted(eps), shifted(-eps));
            let num = (0..jv.len()).fold(0.0f64, |m, i| m.max(((fp[i] - fm[i]) / (2.0 * eps) - jv[i]).abs()));
            let den = jv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            chart_worst = chart_worst.max(num / den);
        }
        worst = worst.max(chart_worst);
        notes.push(format!("{name} {chart_worst:.1e}"));
    }
    outcome(worst <= 1e-6, format!("relative errors: {}", notes.join(", ")))
}

fn certificate_arithmetic() -> Outcome {
    let c = GradientBoundCertificate::from_constants(1.0, 1.0, 1.0, 1.0, 2.0, 1.0).unwrap();
    let exact = c.d == 32.0 / 257.0 && c.c2 == 17.0;
    let w_expected = 17.0 * 2f64.exp() / (1f64.exp() - 1.0);
    let w_ok = (c.w_bound - w_expected).abs() <= 1e-12 * w_expected;
    let mut monotone = true;
    let us = [0.1, 0.5, 1.0, 2.0, 5.0];
    let rs = [0.25, 0.5, 1.0, 2.0, 4.0];
    for c1 in [0.5, 1.0, 2.0, 5.0] {
        for g in [(0.5, 1.0), (1.0, 1.0), (0.2, 3.0)] {
            let w = |u0: f64, r: f64| GradientBoundCertificate::from_constants(u0, r, g.0, g.1, c1, 0.0).unwrap().w_bound;
            for &r in &rs {
                monotone &= us.windows(2).all(|p| w(p[1], r) > w(p[0], r));
            }
            for &u0 in &us {
                monotone &= rs.windows(2).all(|p| w(u0, p[1]) < w(u0, p[0]));
            }
        }
    }
    outcome(
        exact && w_ok && monotone,
        format!("D = {}, C2 = {}, W = {:.6}, monotone grid: {monotone}", c.d, c.c2, c.w_bound),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "minimal triviality", minimal_triviality()));

    let t = Instant::now();
    let caps: Vec<(PmcProblem, GridFunction)> = [(65, 64), (129, 128)]
        .par_iter()
        .map(|&(nr, nt)| {
            let pb = cap_problem(nr, nt);
            let (u, rep) = solve_dirichlet(&pb, &NewtonConfig::default()).unwrap();
            assert!(rep.converged);
            (pb, u)
        })
        .collect();
    results.push((2, "spherical cap exactness", spherical_cap(&caps, t.elapsed())));
    results.push((3, "barrier identities", barrier_identities()));
    results.push((4, "comparison principle", comparison_suite()));

    let t = Instant::now();
    let rep = exhaustion::solve_asymptotic(
        &exhaustion_problem(Resolution::default(), (2..=8).collect()),
        &NewtonConfig::default(),
    );
    let el = t.elapsed();
    let coarse = exhaustion::solve_asymptotic(
        &exhaustion_problem(Resolution::with_radial(32.0), vec![7, 8]),
        &NewtonConfig::default(),
    );
    match (&rep, &coarse) {
        (Ok(rep), Ok(coarse)) => {
            results.push((5, "asymptotic exhaustion", asymptotic_exhaustion(rep, el)));
            results.push((6, "oracle closure", oracle_closure(&caps, coarse.final_solution(), rep.final_solution())));
        }
        (Err(e), _) | (_, Err(e)) => {
            results.push((5, "asymptotic exhaustion", outcome(false, format!("error: {e}"))));
            results.push((6, "oracle closure", outcome(false, format!("error: {e}"))));
        }
    }
    results.push((7, "jacobian correctness", jacobian_check()));
    results.push((8, "certificate arithmetic", certificate_arithmetic()));

    let mut failed = 0;
    for (i, name, o) in &results {
        println!(
            "criterion {i} ({name}): {} | {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
