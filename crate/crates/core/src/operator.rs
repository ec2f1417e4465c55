//! The prescribed mean curvature operator in coordinate form.
//!
//! For a Killing graph `u` over `(M^n, σ)` with warping function `γ`,
//!
//! ```text
//! Q[u] = div(∇u / w) - (γ / w) ⟨∇u, ∇̄_Y Y⟩,        w = √(γ + |∇u|²)
//!      = (a^{ij} u_{i;j} - R ⟨∇γ, ∇u⟩) / w,
//! a^{ij} = σ^{ij} - u^i u^j / w²,     R = (γ + w²) / (2 γ w²),
//! ```
//!
//! and the graph has mean curvature `H` (the averaged trace, with the unit
//! normal `N = (γ Y - Ψ_* ∇u) / w`) exactly when `Q[u] = nH`. The discrete
//! problem solves the `w`-scaled residual
//! `F = a^{ij} u_{i;j} - R ⟨∇γ, ∇u⟩ - nH w` at every unknown.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{PmcError, Result};
use crate::linalg::SparseMatrix;
use crate::mesh::{Grid, GridFunction, NodeGeometry, NodeKind, Stencil};

/// Dirichlet values may differ from the prescribed data by at most this.
pub const DIRICHLET_TOLERANCE: f64 = 1e-12;

/// A discrete Dirichlet problem for `Q[u] = nH`.
#[derive(Clone, Debug)]
pub struct PmcProblem {
    grid: Arc<Grid>,
    h: Vec<f64>,
    boundary: Vec<f64>,
}

impl PmcProblem {
    /// `h` and `phi` are evaluated at node coordinates; `phi` is only used on
    /// Dirichlet nodes.
    pub fn new(
        grid: Arc<Grid>,
        h: impl Fn(&[f64]) -> f64,
        phi: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let hv = (0..grid.len()).map(|p| h(&grid.coords(p))).collect();
        let bv = (0..grid.len())
            .map(|p| {
                if grid.kind(p) == NodeKind::Dirichlet {
                    phi(&grid.coords(p))
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_values(grid, hv, bv)
    }

    /// Nodal `H` values and nodal boundary values (entries at non-Dirichlet
    /// nodes are ignored).
    pub fn from_values(grid: Arc<Grid>, h: Vec<f64>, boundary: Vec<f64>) -> Result<Self> {
        if h.len() != grid.len() || boundary.len() != grid.len() {
            return Err(PmcError::InvalidProblem(format!(
                "expected {} nodal values",
                grid.len()
            )));
        }
        for p in 0..grid.len() {
            match grid.kind(p) {
                NodeKind::Dirichlet => {
                    if !boundary[p].is_finite() {
                        return Err(PmcError::InvalidProblem(format!(
                            "boundary value at node {p} is not finite"
                        )));
                    }
                }
                _ => {
                    if !h[p].is_finite() {
                        return Err(PmcError::InvalidProblem(format!(
                            "H at node {p} is not finite"
                        )));
                    }
                }
            }
        }
        let mut boundary = boundary;
        for p in 0..grid.len() {
            if grid.kind(p) != NodeKind::Dirichlet {
                boundary[p] = 0.0;
            }
        }
        Ok(PmcProblem { grid, h, boundary })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn h(&self, node: usize) -> f64 {
        self.h[node]
    }

    pub fn h_values(&self) -> &[f64] {
        &self.h
    }

    pub fn boundary(&self, node: usize) -> f64 {
        self.boundary[node]
    }

    pub fn boundary_values(&self) -> &[f64] {
        &self.boundary
    }

    /// `sup |H|` over unknown nodes.
    pub fn h_sup(&self) -> f64 {
        self.grid.unknowns().iter().fold(0.0f64, |m, &p| m.max(self.h[p].abs()))
    }

    /// Same grid and boundary data with a different `H` field.
    pub fn with_h(&self, h: Vec<f64>) -> Result<Self> {
        Self::from_values(Arc::clone(&self.grid), h, self.boundary.clone())
    }

    pub fn with_constant_h(&self, c: f64) -> Result<Self> {
        self.with_h(vec![c; self.grid.len()])
    }

    /// Same grid and `H` with new boundary values.
    pub fn with_boundary(&self, boundary: Vec<f64>) -> Result<Self> {
        Self::from_values(Arc::clone(&self.grid), self.h.clone(), boundary)
    }

    /// `H` multiplied by `t` (continuation).
    pub fn scaled_h(&self, t: f64) -> Result<Self> {
        self.with_h(self.h.iter().map(|v| v * t).collect())
    }

    /// Zero on unknown nodes, the Dirichlet data on the boundary.
    pub fn boundary_extension_by_zero(&self) -> GridFunction {
        let mut f = GridFunction::zeros(Arc::clone(&self.grid));
        for p in self.grid.dirichlet_nodes() {
            f.set(p, self.boundary[p]);
        }
        f
    }

    /// Rejects `u` whose Dirichlet values differ from the data.
    pub fn check_boundary(&self, u: &GridFunction) -> Result<()> {
        if !u.same_grid(&GridFunction::zeros(Arc::clone(&self.grid))) {
            return Err(PmcError::GridMismatch("solution lives on another grid".into()));
        }
        for p in self.grid.dirichlet_nodes() {
            let m = (u.get(p) - self.boundary[p]).abs();
            if !(m <= DIRICHLET_TOLERANCE) {
                return Err(PmcError::DirichletMismatch { node: p, mismatch: m });
            }
        }
        Ok(())
    }
}

/// `(w, a^{ij}, R)` at one node.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorTerms {
    pub w: f64,
    /// `a^{ij}`, row-major.
    pub a: Vec<f64>,
    pub r: f64,
}

/// Pointwise evaluation from the local jet `(d, D)` of coordinate partials.
#[derive(Clone, Debug)]
pub(crate) struct Local {
    pub w: f64,
    pub a: Vec<f64>,
    pub r: f64,
    /// `a^{ij} u_{i;j} - R ⟨∇γ, ∇u⟩`
    pub q_scaled: f64,
    /// `∂F/∂d_k`
    pub dfd: Vec<f64>,
    /// `|∇u|²`
    pub grad_norm2: f64,
}

pub(crate) fn local_eval(geo: &NodeGeometry, d: &[f64], dd: &[f64], nh: f64) -> Local {
    let n = d.len();
    let si = &geo.sigma_inv;
    let up = geo.raise(d);
    let g2: f64 = d.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    let gamma = geo.gamma;
    let w2 = gamma + g2;
    let w = w2.sqrt();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = si[i * n + j] - up[i] * up[j] / w2;
        }
    }
    let r = 0.5 / w2 + 0.5 / gamma;
    let ch = &geo.christoffel;
    let mut hc = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = dd[i * n + j];
            for k in 0..n {
                v -= ch.get(k, i, j) * d[k];
            }
            hc[i * n + j] = v;
        }
    }
    let b = &geo.grad_gamma;
    let bd: f64 = b.iter().zip(d).map(|(x, y)| x * y).sum();
    let ahc: f64 = a.iter().zip(&hc).map(|(x, y)| x * y).sum();
    let q_scaled = ahc - r * bd;

    // ∂F/∂d_k
    let mut uhu = 0.0;
    for i in 0..n {
        for j in 0..n {
            uhu += up[i] * up[j] * hc[i * n + j];
        }
    }
    let w4 = w2 * w2;
    let mut dfd = vec![0.0; n];
    for k in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s -= 2.0 * si[i * n + k] * up[j] * hc[i * n + j] / w2;
                s -= a[i * n + j] * ch.get(k, i, j);
            }
        }
        s += 2.0 * up[k] * uhu / w4;
        s += up[k] * bd / w4;
        s -= r * b[k];
        s -= nh * up[k] / w;
        dfd[k] = s;
    }
    Local {
        w,
        a,
        r,
        q_scaled,
        dfd,
        grad_norm2: g2,
    }
}

fn stencil_for<'a>(grid: &'a Grid, node: usize, owned: &'a mut Option<Stencil>) -> Result<&'a Stencil> {
    match grid.unknown_of(node) {
        Some(k) if grid.unknowns()[k] == node => Ok(&grid.operator_stencils()?[k]),
        _ => {
            *owned = Some(grid.stencil(node, 1)?);
            Ok(owned.as_ref().unwrap())
        }
    }
}

fn jet(st: &Stencil, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (st.apply_first(values), st.apply_second(values))
}

pub fn evaluate_terms(problem: &PmcProblem, u: &GridFunction, node: usize) -> Result<OperatorTerms> {
    let grid = problem.grid();
    let mut owned = None;
    let st = stencil_for(grid, node, &mut owned)?;
    let (d, dd) = jet(st, u.values());
    let nh = problem.dim() as f64 * problem.h(node);
    let l = local_eval(grid.node_geometry(node), &d, &dd, nh);
    Ok(OperatorTerms {
        w: l.w,
        a: l.a,
        r: l.r,
    })
}

/// `Q[u]` at a node.
pub fn q_divergence_form(problem: &PmcProblem, u: &GridFunction, node: usize) -> Result<f64> {
    let grid = problem.grid();
    let mut owned = None;
    let st = stencil_for(grid, node, &mut owned)?;
    let (d, dd) = jet(st, u.values());
    let l = local_eval(grid.node_geometry(node), &d, &dd, 0.0);
    Ok(l.q_scaled / l.w)
}

/// Residual, Jacobian rows and a per-row rounding floor.
pub(crate) struct Assembly {
    pub residual: Vec<f64>,
    /// Per unknown: `(node, ∂F/∂u_node)` over the whole stencil, Dirichlet
    /// nodes included, pole replicas merged into node 0.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// `ε Σ |terms|`: the magnitude of rounding error in each residual entry.
    pub floor: Vec<f64>,
    pub max_grad: f64,
    /// `min(λ_min(a) - γ/w²)` over unknowns (orthonormal frame).
    pub ellipticity_margin: f64,
}

pub(crate) fn assemble(
    problem: &PmcProblem,
    u: &GridFunction,
    with_rows: bool,
    with_ellipticity: bool,
) -> Result<Assembly> {
    let grid = problem.grid();
    let stencils = grid.operator_stencils()?;
    let n = grid.dim();
    let nf = n as f64;
    let vals = u.values();
    let out: Vec<(f64, Vec<(usize, f64)>, f64, f64, f64)> = grid
        .unknowns()
        .par_iter()
        .zip(stencils.par_iter())
        .map(|(&p, st)| {
            let (d, dd) = jet(st, vals);
            let nh = nf * problem.h(p);
            let geo = grid.node_geometry(p);
            let l = local_eval(geo, &d, &dd, nh);
            let f = l.q_scaled - nh * l.w;

            let mut mag = (nh * l.w).abs();
            for (k, w) in st.first.iter().enumerate() {
                mag += l.dfd[k].abs() * w.iter().map(|&(q, c)| (c * vals[q]).abs()).sum::<f64>();
            }
            for (ij, w) in st.second.iter().enumerate() {
                mag += l.a[ij].abs() * w.iter().map(|&(q, c)| (c * vals[q]).abs()).sum::<f64>();
            }
            let floor = f64::EPSILON * mag;

            let mut row = Vec::new();
            if with_rows {
                for (k, w) in st.first.iter().enumerate() {
                    row.extend(w.iter().map(|&(q, c)| (q, c * l.dfd[k])));
                }
                for (ij, w) in st.second.iter().enumerate() {
                    row.extend(w.iter().map(|&(q, c)| (q, c * l.a[ij])));
                }
                row.sort_unstable_by_key(|e| e.0);
                row.dedup_by(|b, a| {
                    if a.0 == b.0 {
                        a.1 += b.1;
                        true
                    } else {
                        false
                    }
                });
            }
            let ell = if with_ellipticity {
                ellipticity_gap(geo, &l)
            } else {
                f64::INFINITY
            };
            (f, row, floor, l.grad_norm2.sqrt(), ell)
        })
        .collect();

    let mut asm = Assembly {
        residual: Vec::with_capacity(out.len()),
        rows: Vec::with_capacity(if with_rows { out.len() } else { 0 }),
        floor: Vec::with_capacity(out.len()),
        max_grad: 0.0,
        ellipticity_margin: f64::INFINITY,
    };
    for (f, row, fl, g, e) in out {
        asm.residual.push(f);
        if with_rows {
            asm.rows.push(row);
        }
        asm.floor.push(fl);
        asm.max_grad = asm.max_grad.max(g);
        asm.ellipticity_margin = asm.ellipticity_margin.min(e);
    }
    Ok(asm)
}

/// Smallest eigenvalue of `a` in a `σ`-orthonormal frame, minus `γ/w²`.
fn ellipticity_gap(geo: &NodeGeometry, l: &Local) -> f64 {
    use nalgebra::DMatrix;
    let n = geo.dim();
    let sigma = DMatrix::from_row_slice(n, n, &geo.sigma);
    let a = DMatrix::from_row_slice(n, n, &l.a);
    let Some(chol) = sigma.cholesky() else {
        return f64::NEG_INFINITY;
    };
    let lt = chol.l().transpose();
    let m = &lt * a * lt.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let lam = nalgebra::SymmetricEigen::new(m).eigenvalues.min();
    lam - geo.gamma / (l.w * l.w)
}

/// `F_p = a^{ij}u_{i;j} - R⟨∇γ,∇u⟩ - nH w` at every unknown.
pub fn residual(problem: &PmcProblem, u: &GridFunction) -> Result<Vec<f64>> {
    problem.check_boundary(u)?;
    Ok(assemble(problem, u, false, false)?.residual)
}

/// Maps assembled rows onto unknown columns, dropping Dirichlet nodes.
pub(crate) fn rows_to_matrix(grid: &Grid, rows: &[Vec<(usize, f64)>]) -> SparseMatrix {
    let mapped: Vec<Vec<(usize, f64)>> = rows
        .par_iter()
        .map(|row| {
            row.iter()
                .filter_map(|&(q, c)| grid.unknown_of(q).map(|k| (k, c)))
                .collect()
        })
        .collect();
    SparseMatrix::from_rows(grid.num_unknowns(), mapped)
}

/// Analytic Jacobian `∂F_p/∂u_q` over unknowns.
pub fn jacobian(problem: &PmcProblem, u: &GridFunction) -> Result<SparseMatrix> {
    problem.check_boundary(u)?;
    let asm = assemble(problem, u, true, false)?;
    Ok(rows_to_matrix(problem.grid(), &asm.rows))
}

/// Minimum over unknowns of `λ_min(a) - γ/w²`; non-negative up to rounding.
pub fn ellipticity_margin(problem: &PmcProblem, u: &GridFunction) -> Result<f64> {
    Ok(assemble(problem, u, false, true)?.ellipticity_margin)
}
