//! Independent checks of solved graphs.
//!
//! The mean curvature oracle rebuilds the graph as a hypersurface of the
//! warped product `σ_ij dx^i dx^j + (1/γ) ds²`: induced metric, unit normal,
//! second fundamental form through the closed-form ambient Christoffel
//! symbols, then the trace. It shares no code with [`crate::operator`] and
//! differentiates `u` with the doubled-spacing stencil family.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PmcError, Result};
use crate::mesh::{GridFunction, NodeKind};
use crate::operator::PmcProblem;

/// Stencil spread used by the oracle.
pub const ORACLE_SPREAD: usize = 2;

/// Mean curvature `H` of the graph of `u` at `node`, oriented by
/// `N = (γ ∂_s - u^i ∂_i) / w`.
pub fn mean_curvature_oracle(u: &GridFunction, node: usize) -> Result<f64> {
    let grid = u.grid();
    let st = grid.stencil(node, ORACLE_SPREAD)?;
    let n = grid.dim();
    let du = st.apply_first(u.values());
    let ddu = st.apply_second(u.values());
    let geo = grid.node_geometry(node);
    let gamma = geo.gamma;
    let dg = &geo.dgamma;

    // ambient coordinates (x^1..x^n, s), index n is s
    let m = n + 1;
    let mut ginv_amb = DMatrix::<f64>::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            ginv_amb[(i, j)] = geo.sigma_inv[i * n + j];
        }
    }
    ginv_amb[(n, n)] = gamma;
    let mut gam = vec![0.0; m * m * m];
    let at = |a: usize, b: usize, c: usize| (a * m + b) * m + c;
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                gam[at(k, i, j)] = geo.christoffel.get(k, i, j);
            }
        }
        // Γ^k_ss = σ^{kl} ∂_l γ / (2γ²)
        gam[at(k, n, n)] = (0..n).map(|l| geo.sigma_inv[k * n + l] * dg[l]).sum::<f64>()
            / (2.0 * gamma * gamma);
    }
    for i in 0..n {
        // Γ^s_is = Γ^s_si = -∂_i γ / (2γ)
        gam[at(n, i, n)] = -dg[i] / (2.0 * gamma);
        gam[at(n, n, i)] = -dg[i] / (2.0 * gamma);
    }

    // tangent vectors X_i = ∂_i + u_i ∂_s
    let tangent = |i: usize| {
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        v[n] = du[i];
        v
    };
    let mut g_amb = DMatrix::<f64>::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            g_amb[(i, j)] = geo.sigma[i * n + j];
        }
    }
    g_amb[(n, n)] = 1.0 / gamma;

    let xs: Vec<Vec<f64>> = (0..n).map(tangent).collect();
    let induced = DMatrix::from_fn(n, n, |i, j| {
        let mut s = 0.0;
        for a in 0..m {
            for b in 0..m {
                s += g_amb[(a, b)] * xs[i][a] * xs[j][b];
            }
        }
        s
    });
    let ginv = induced.clone().try_inverse().ok_or_else(|| {
        PmcError::InvalidProblem(format!("degenerate induced metric at node {node}"))
    })?;

    // N = (γ ∂_s - u^i ∂_i) / w
    let up: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| geo.sigma_inv[i * n + j] * du[j]).sum())
        .collect();
    let g2: f64 = up.iter().zip(&du).map(|(a, b)| a * b).sum();
    let w = (gamma + g2).sqrt();
    let mut normal = vec![0.0; m];
    for i in 0..n {
        normal[i] = -up[i] / w;
    }
    normal[n] = gamma / w;

    let mut trace = 0.0;
    for i in 0..n {
        for j in 0..n {
            // ∇̄_{X_i} X_j = ∂_i∂_j u ∂_s + Γ̄(X_i, X_j)
            let mut v = vec![0.0; m];
            v[n] = ddu[i * n + j];
            for c in 0..m {
                for a in 0..m {
                    for b in 0..m {
                        v[c] += gam[at(c, a, b)] * xs[i][a] * xs[j][b];
                    }
                }
            }
            let mut aij = 0.0;
            for a in 0..m {
                for b in 0..m {
                    aij += g_amb[(a, b)] * v[a] * normal[b];
                }
            }
            trace += ginv[(i, j)] * aij;
        }
    }
    Ok(trace / n as f64)
}

/// Whether the oracle stencil is complete at `node`.
pub fn oracle_available(u: &GridFunction, node: usize) -> bool {
    let grid = u.grid();
    grid.kind(node) != NodeKind::Dirichlet
        && grid.unknown_of(node).is_some_and(|k| grid.unknowns()[k] == node)
        && grid.stencil(node, ORACLE_SPREAD).is_ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub max_deviation: f64,
    pub node: usize,
    pub nodes_checked: usize,
}

/// `max |H_oracle - H|` over unknown nodes with a complete oracle stencil,
/// restricted to nodes accepted by `filter`.
pub fn oracle_max_deviation_where(
    problem: &PmcProblem,
    u: &GridFunction,
    filter: impl Fn(&[f64]) -> bool,
) -> Result<OracleSummary> {
    let grid = u.grid();
    let mut best = OracleSummary {
        max_deviation: 0.0,
        node: 0,
        nodes_checked: 0,
    };
    for &p in grid.unknowns() {
        if !oracle_available(u, p) || !filter(&grid.coords(p)) {
            continue;
        }
        let dev = (mean_curvature_oracle(u, p)? - problem.h(p)).abs();
        best.nodes_checked += 1;
        if dev > best.max_deviation {
            best.max_deviation = dev;
            best.node = p;
        }
    }
    if best.nodes_checked == 0 {
        return Err(PmcError::InvalidProblem("no node admits the oracle stencil".into()));
    }
    Ok(best)
}

pub fn oracle_max_deviation(problem: &PmcProblem, u: &GridFunction) -> Result<OracleSummary> {
    oracle_max_deviation_where(problem, u, |_| true)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCertificate {
    pub passed: bool,
    /// `max(0, max(u₁ - u₂))`.
    pub max_violation: f64,
    pub node: usize,
    pub tolerance: f64,
}

/// Checks `u₁ ≤ u₂ + tolerance` at every node.
pub fn comparison_check(u1: &GridFunction, u2: &GridFunction, tolerance: f64) -> Result<ComparisonCertificate> {
    if !u1.same_grid(u2) {
        return Err(PmcError::GridMismatch("comparison of fields on different grids".into()));
    }
    let mut worst = 0.0;
    let mut node = 0;
    for (p, (a, b)) in u1.values().iter().zip(u2.values()).enumerate() {
        let v = a - b;
        if v > worst {
            worst = v;
            node = p;
        }
    }
    Ok(ComparisonCertificate {
        passed: worst <= tolerance,
        max_violation: worst,
        node,
        tolerance,
    })
}

/// Constants of the interior gradient estimate at a point `o`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoundCertificate {
    pub u0: f64,
    pub r: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "W")]
    pub w_bound: f64,
    pub w_o: f64,
    /// `w(o) ≤ W`; informational, since `W` bounds `w(o)` only for
    /// sufficiently large `C₁`.
    pub bound_holds: bool,
}

impl GradientBoundCertificate {
    /// `D = 32γ₀/(r²γ₀ + 256u₀²)`, `C₂ = γ₁ + 16u₀/r`,
    /// `W = C₂ e^{C₁} / (e^{C₁/2} - 1)`.
    pub fn from_constants(u0: f64, r: f64, gamma0: f64, gamma1: f64, c1: f64, w_o: f64) -> Result<Self> {
        if !(u0 > 0.0) {
            return Err(PmcError::Certificate(format!("u0 = {u0} must be positive")));
        }
        if !(r > 0.0) || !(gamma0 > 0.0) || !(gamma1 >= gamma0) || !(c1 > 0.0) {
            return Err(PmcError::Certificate(format!(
                "need r > 0, 0 < gamma0 <= gamma1, C1 > 0 (got r={r}, gamma0={gamma0}, gamma1={gamma1}, C1={c1})"
            )));
        }
        let d = 32.0 * gamma0 / (r * r * gamma0 + 256.0 * u0 * u0);
        let c2 = gamma1 + 16.0 * u0 / r;
        let w_bound = c2 * c1.exp() / ((c1 / 2.0).exp() - 1.0);
        let all = [d, c2, w_bound];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(PmcError::Certificate("non-finite certificate constant".into()));
        }
        Ok(GradientBoundCertificate {
            u0,
            r,
            gamma0,
            gamma1,
            d,
            c2,
            c1,
            w_bound,
            w_o,
            bound_holds: w_o <= w_bound,
        })
    }
}

/// `u - (sup u + 1)`: a negative solution of the same equation.
pub fn shift_negative(u: &GridFunction) -> GridFunction {
    let s = u.max() + 1.0;
    let vals = u.values().iter().map(|v| v - s).collect();
    GridFunction::new(u.grid().clone(), vals).expect("shift keeps values finite")
}

/// Evaluates the certificate of a (negative) discrete solution at node `o`
/// over the geodesic ball `B_r(o)`.
pub fn certificate_evaluate(u: &GridFunction, o: usize, r: f64, c1: f64) -> Result<GradientBoundCertificate> {
    let grid = u.grid();
    let chart = grid.chart();
    let uo = u.get(o);
    if !(uo < 0.0) {
        return Err(PmcError::Certificate(format!(
            "u(o) = {uo} must be negative; shift the solution first"
        )));
    }
    let xo = grid.coords(o);
    let dist = |p: usize| -> Result<f64> {
        chart
            .distance(&xo, &grid.coords(p))
            .ok_or_else(|| PmcError::Certificate("chart has no closed-form distance".into()))
    };
    let mut g0 = f64::INFINITY;
    let mut g1 = 0.0f64;
    for p in 0..grid.len() {
        let dp = dist(p)?;
        if grid.kind(p) == NodeKind::Dirichlet && dp < r {
            return Err(PmcError::Certificate(format!(
                "ball of radius {r} reaches the boundary at node {p}"
            )));
        }
        if dp <= r {
            let g = grid.node_geometry(p).gamma;
            g0 = g0.min(g);
            g1 = g1.max(g);
        }
    }
    let grad = u.gradient_norm(o)?;
    let w_o = (grid.node_geometry(o).gamma + grad * grad).sqrt();
    GradientBoundCertificate::from_constants(-uo, r, g0, g1, c1, w_o)
}

/// Verification block attached to a solve report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyDiagnostics {
    pub oracle_max_dev: f64,
    pub comparison_max_violation: f64,
    pub certificate: CertificateSummary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub w_o: f64,
}

impl From<&GradientBoundCertificate> for CertificateSummary {
    fn from(c: &GradientBoundCertificate) -> Self {
        CertificateSummary {
            d: c.d,
            c2: c.c2,
            c1: c.c1,
            w: c.w_bound,
            w_o: c.w_o,
        }
    }
}
