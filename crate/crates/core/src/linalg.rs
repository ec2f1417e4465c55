//! Sparse matrices and the linear solvers used by Newton's method.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use serde::{Deserialize, Serialize};

use crate::error::{PmcError, Result};

/// Compressed sparse row matrix, square.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Rows given as `(column, value)` lists; duplicates are summed.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), n, "row count");
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < n, "column {c} out of range");
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        match self.cols[a..b].binary_search(&c) {
            Ok(k) => self.vals[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }
}

/// Linear solver selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LinearSolver {
    /// Sparse LU with partial pivoting.
    Direct,
    /// ILU(0)-preconditioned BiCGSTAB.
    Iterative { tolerance: f64, max_iterations: usize },
    /// Direct up to `threshold` unknowns, iterative above.
    Auto { threshold: usize },
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::Auto { threshold: 100_000 }
    }
}

impl LinearSolver {
    pub fn solve(&self, a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
        match *self {
            LinearSolver::Direct => solve_direct(a, b),
            LinearSolver::Iterative {
                tolerance,
                max_iterations,
            } => bicgstab(a, b, tolerance, max_iterations),
            LinearSolver::Auto { threshold } => {
                if a.dim() <= threshold {
                    solve_direct(a, b)
                } else {
                    bicgstab(a, b, 1e-12, 2000)
                }
            }
        }
    }
}

static SEQUENTIAL: Once = Once::new();

/// Sparse LU solve. The factorization runs single-threaded so results do
/// not depend on the thread count; this sets faer's global parallelism.
pub fn solve_direct(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
    let n = a.dim();
    let mut trip = Vec::with_capacity(a.nnz());
    for r in 0..n {
        for (c, v) in a.row(r) {
            trip.push(Triplet::new(r, c, v));
        }
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| PmcError::SingularLinearSystem(format!("{e:?}")))?;
    let lu = m
        .sp_lu()
        .map_err(|e| PmcError::SingularLinearSystem(format!("{e:?}")))?;
    let rhs = faer::Col::<f64>::from_fn(n, |i| b[i]);
    let x = lu.solve(&rhs);
    let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(PmcError::SingularLinearSystem(
            "LU solve produced non-finite values".into(),
        ));
    }
    Ok(out)
}

/// Incomplete LU with the sparsity pattern of `a`.
struct Ilu0 {
    m: SparseMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &SparseMatrix) -> Result<Self> {
        let mut m = a.clone();
        let n = m.n;
        let mut diag = vec![usize::MAX; n];
        for r in 0..n {
            for k in m.row_ptr[r]..m.row_ptr[r + 1] {
                if m.cols[k] == r {
                    diag[r] = k;
                }
            }
            if diag[r] == usize::MAX {
                return Err(PmcError::SingularLinearSystem(format!(
                    "row {r} has no diagonal entry"
                )));
            }
        }
        for i in 1..n {
            let (ra, rb) = (m.row_ptr[i], m.row_ptr[i + 1]);
            for kk in ra..rb {
                let k = m.cols[kk];
                if k >= i {
                    break;
                }
                let piv = m.vals[diag[k]];
                if piv == 0.0 {
                    return Err(PmcError::SingularLinearSystem(format!("zero pivot at {k}")));
                }
                m.vals[kk] /= piv;
                let lik = m.vals[kk];
                let (ka, kb) = (m.row_ptr[k], m.row_ptr[k + 1]);
                let mut p = kk + 1;
                for q in ka..kb {
                    let j = m.cols[q];
                    if j <= k {
                        continue;
                    }
                    while p < rb && m.cols[p] < j {
                        p += 1;
                    }
                    if p < rb && m.cols[p] == j {
                        m.vals[p] -= lik * m.vals[q];
                    }
                }
            }
        }
        Ok(Ilu0 { m, diag })
    }

    fn apply(&self, b: &[f64]) -> Vec<f64> {
        let m = &self.m;
        let n = m.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in m.row_ptr[i]..self.diag[i] {
                s -= m.vals[k] * y[m.cols[k]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in self.diag[i] + 1..m.row_ptr[i + 1] {
                s -= m.vals[k] * y[m.cols[k]];
            }
            y[i] = s / m.vals[self.diag[i]];
        }
        y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB; `tol` is relative to `‖b‖₂`.
pub fn bicgstab(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let pre = Ilu0::new(a)?;
    let bn = norm(b);
    if bn == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = pre.apply(&p);
        v = a.matvec(&ph);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = (0..n).map(|i| r[i] - alpha * v[i]).collect();
        if norm(&s) <= tol * bn {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok(x);
        }
        let sh = pre.apply(&s);
        let t = a.matvec(&sh);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= tol * bn {
            return Ok(x);
        }
        if !omega.is_finite() || !alpha.is_finite() {
            break;
        }
    }
    Err(PmcError::SingularLinearSystem(format!(
        "BiCGSTAB did not reach relative residual {tol:e} in {max_iter} iterations"
    )))
}
