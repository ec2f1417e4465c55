//! Structured grids on chart coordinate boxes, nodal fields and
//! finite-difference stencils.
//!
//! Nodes are stored in row-major order (last axis fastest). Non-periodic
//! axes carry one Dirichlet layer at each end; periodic axes wrap by index.
//!
//! On a disc grid with the pole patch (n = 2, `ρ ∈ [0, ρ_max]`, full
//! periodic `θ`) the whole `ρ = 0` row represents a single point. It is one
//! unknown whose value is replicated across the row. Derivatives at the pole
//! are taken in normal Cartesian coordinates from Fourier sums over the first
//! ring, and radial differences that step past the pole are reflected to the
//! opposite ray, `u(-ρ, θ) = u(ρ, θ + π)`.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{PmcError, Result};
use crate::geometry::{Chart, Christoffel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Dirichlet,
    Pole,
}

/// `(node, weight)` pairs of a linear functional on nodal values.
pub type Weights = Vec<(usize, f64)>;

/// Linear stencils for the coordinate partials `∂_a u` and `∂_a ∂_b u` at a
/// node. `second` is a full `n × n` row-major table (symmetric).
#[derive(Clone, Debug)]
pub struct Stencil {
    pub first: Vec<Weights>,
    pub second: Vec<Weights>,
}

impl Stencil {
    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn apply_first(&self, values: &[f64]) -> Vec<f64> {
        self.first.iter().map(|w| apply(w, values)).collect()
    }

    pub fn apply_second(&self, values: &[f64]) -> Vec<f64> {
        self.second.iter().map(|w| apply(w, values)).collect()
    }
}

#[inline]
pub(crate) fn apply(w: &[(usize, f64)], values: &[f64]) -> f64 {
    w.iter().map(|&(q, c)| c * values[q]).sum()
}

/// Chart data frozen at one node. Pole nodes use the normal Cartesian frame
/// at the pole, where the metric is the identity and `∇γ = 0`.
#[derive(Clone, Debug)]
pub struct NodeGeometry {
    /// `σ_ij`, row-major.
    pub sigma: Vec<f64>,
    /// `σ^ij`, row-major.
    pub sigma_inv: Vec<f64>,
    pub christoffel: Christoffel,
    pub gamma: f64,
    /// Covariant partials `∂_i γ`.
    pub dgamma: Vec<f64>,
    /// Contravariant gradient `σ^{ij} ∂_j γ`.
    pub grad_gamma: Vec<f64>,
}

impl NodeGeometry {
    fn from_chart(chart: &Chart, x: &[f64]) -> Self {
        let n = chart.dim();
        let flat = |m: DMatrix<f64>| -> Vec<f64> {
            let mut v = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    v.push(m[(i, j)]);
                }
            }
            v
        };
        let sigma_inv = flat(chart.inverse_metric(x));
        let dgamma = chart.gamma_partials(x);
        let grad_gamma = (0..n)
            .map(|i| (0..n).map(|j| sigma_inv[i * n + j] * dgamma[j]).sum())
            .collect();
        NodeGeometry {
            sigma: flat(chart.metric(x)),
            sigma_inv,
            christoffel: chart.christoffel(x),
            gamma: chart.gamma(x),
            dgamma,
            grad_gamma,
        }
    }

    fn cartesian(n: usize, gamma: f64) -> Self {
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        NodeGeometry {
            sigma: id.clone(),
            sigma_inv: id,
            christoffel: Christoffel::zeros(n),
            gamma,
            dgamma: vec![0.0; n],
            grad_gamma: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.dgamma.len()
    }

    /// Raises a covariant vector with `σ^{ij}`.
    pub fn raise(&self, d: &[f64]) -> Vec<f64> {
        let n = d.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.sigma_inv[i * n + j] * d[j]).sum())
            .collect()
    }
}

/// A structured grid over the coordinate box of a chart.
pub struct Grid {
    chart: Arc<Chart>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    periodic: Vec<bool>,
    strides: Vec<usize>,
    kinds: Vec<NodeKind>,
    unknown_of: Vec<Option<usize>>,
    unknowns: Vec<usize>,
    geometry: Vec<NodeGeometry>,
    pole: bool,
    stencils: OnceLock<Vec<Stencil>>,
}

/// Minimum number of angular nodes on a pole-patch grid.
pub const MIN_POLE_RING: usize = 8;

impl Grid {
    /// Builds a grid with `counts[a]` nodes along axis `a`.
    pub fn new(chart: Arc<Chart>, counts: &[usize]) -> Result<Self> {
        let n = chart.dim();
        if counts.len() != n {
            return Err(PmcError::InvalidGrid(format!(
                "expected {n} node counts, got {}",
                counts.len()
            )));
        }
        let axes = chart.axes().to_vec();
        let periodic: Vec<bool> = axes.iter().map(|a| a.periodic).collect();
        for (a, (&c, &p)) in counts.iter().zip(&periodic).enumerate() {
            let min = if p { 4 } else { 3 };
            if c < min {
                return Err(PmcError::InvalidGrid(format!(
                    "axis {a}: {c} nodes, need at least {min}"
                )));
            }
        }
        let pole = chart.has_pole_patch();
        if pole && (counts[1] < MIN_POLE_RING || counts[1] % 2 != 0) {
            return Err(PmcError::InvalidGrid(format!(
                "pole patch needs an even angular count >= {MIN_POLE_RING}, got {}",
                counts[1]
            )));
        }
        let spacing: Vec<f64> = axes
            .iter()
            .zip(counts)
            .map(|(a, &c)| {
                if a.periodic {
                    a.extent() / c as f64
                } else {
                    a.extent() / (c - 1) as f64
                }
            })
            .collect();
        let mut strides = vec![1usize; n];
        for a in (0..n - 1).rev() {
            strides[a] = strides[a + 1] * counts[a + 1];
        }
        let total: usize = counts.iter().product();

        let mut kinds = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for node in 0..total {
            unflatten(node, &strides, &mut idx);
            let mut kind = NodeKind::Interior;
            for a in 0..n {
                if periodic[a] {
                    continue;
                }
                if pole && a == 0 && idx[0] == 0 {
                    kind = NodeKind::Pole;
                    break;
                }
                if idx[a] == 0 || idx[a] == counts[a] - 1 {
                    kind = NodeKind::Dirichlet;
                }
            }
            kinds.push(kind);
        }

        let mut unknown_of = vec![None; total];
        let mut unknowns = Vec::new();
        for node in 0..total {
            match kinds[node] {
                NodeKind::Interior => {
                    unknown_of[node] = Some(unknowns.len());
                    unknowns.push(node);
                }
                NodeKind::Pole if node == 0 => {
                    unknown_of[node] = Some(unknowns.len());
                    unknowns.push(node);
                }
                _ => {}
            }
        }
        if pole {
            for u in unknown_of.iter_mut().take(counts[1]) {
                *u = Some(0);
            }
        }
        if unknowns.is_empty() {
            return Err(PmcError::InvalidGrid("grid has no interior nodes".into()));
        }

        let geometry: Vec<NodeGeometry> = (0..total)
            .into_par_iter()
            .map(|node| {
                if kinds[node] == NodeKind::Pole {
                    let mut x = vec![0.0; n];
                    x[1] = axes[1].lower;
                    NodeGeometry::cartesian(n, chart.gamma(&x))
                } else {
                    let mut ix = vec![0usize; n];
                    unflatten(node, &strides, &mut ix);
                    let x: Vec<f64> = (0..n)
                        .map(|a| axes[a].lower + ix[a] as f64 * spacing[a])
                        .collect();
                    NodeGeometry::from_chart(&chart, &x)
                }
            })
            .collect();

        Ok(Grid {
            chart,
            counts: counts.to_vec(),
            spacing,
            periodic,
            strides,
            kinds,
            unknown_of,
            unknowns,
            geometry,
            pole,
            stencils: OnceLock::new(),
        })
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn has_pole(&self) -> bool {
        self.pole
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    /// Nodes carrying an unknown: interior nodes and the pole representative.
    pub fn unknowns(&self) -> &[usize] {
        &self.unknowns
    }

    pub fn num_unknowns(&self) -> usize {
        self.unknowns.len()
    }

    /// Unknown index of a node; every pole replica maps to the same unknown.
    pub fn unknown_of(&self, node: usize) -> Option<usize> {
        self.unknown_of[node]
    }

    pub fn dirichlet_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&p| self.kinds[p] == NodeKind::Dirichlet)
    }

    pub fn node_geometry(&self, node: usize) -> &NodeGeometry {
        &self.geometry[node]
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        unflatten(node, &self.strides, &mut idx);
        idx
    }

    pub fn node_at(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let idx = self.multi_index(node);
        let axes = self.chart.axes();
        (0..self.dim())
            .map(|a| axes[a].lower + idx[a] as f64 * self.spacing[a])
            .collect()
    }

    /// Resolves a possibly out-of-range multi-index: periodic axes wrap,
    /// negative radial indices on pole grids reflect through the pole.
    pub fn neighbor(&self, idx: &[isize]) -> Option<usize> {
        let n = self.dim();
        let mut fixed: Vec<isize> = idx.to_vec();
        if self.pole && fixed[0] < 0 {
            fixed[0] = -fixed[0];
            fixed[1] += (self.counts[1] / 2) as isize;
        }
        let mut node = 0usize;
        for a in 0..n {
            let c = self.counts[a] as isize;
            let mut i = fixed[a];
            if self.periodic[a] {
                i = i.rem_euclid(c);
            } else if i < 0 || i >= c {
                return None;
            }
            node += i as usize * self.strides[a];
        }
        if self.pole && node < self.counts[1] {
            node = 0;
        }
        Some(node)
    }

    fn check_same(&self, other: &Grid) -> bool {
        self.counts == other.counts
            && self.chart.kind() == other.chart.kind()
            && self.chart.axes() == other.chart.axes()
            && self.pole == other.pole
    }

    /// Finite-difference stencils used by the discrete operator (spread 1),
    /// indexed by unknown. Built once and cached.
    pub fn operator_stencils(&self) -> Result<&[Stencil]> {
        if let Some(s) = self.stencils.get() {
            return Ok(s);
        }
        let built: Result<Vec<Stencil>> = self
            .unknowns
            .par_iter()
            .map(|&node| self.stencil(node, 1))
            .collect();
        let built = built?;
        Ok(self.stencils.get_or_init(|| built))
    }

    /// Derivative stencils at `node` whose offsets are multiples of `spread`.
    ///
    /// Spread 1 is the operator discretization; spread 2 (offsets doubled) is
    /// the independent stencil family used by the verification oracle.
    pub fn stencil(&self, node: usize, spread: usize) -> Result<Stencil> {
        match self.kinds[node] {
            NodeKind::Dirichlet => Err(PmcError::BoundaryNode(node)),
            NodeKind::Pole => self.pole_stencil(spread),
            NodeKind::Interior => self.coordinate_stencil(node, spread),
        }
    }

    fn axis_first(&self, idx: &[usize], a: usize, s: usize) -> Vec<(isize, f64)> {
        let h = self.spacing[a] * s as f64;
        let si = s as isize;
        if self.periodic[a] {
            let omega = 2.0 * std::f64::consts::PI / self.chart.axes()[a].extent();
            let den = 2.0 * (omega * h).sin() / omega;
            return vec![(si, 1.0 / den), (-si, -1.0 / den)];
        }
        if self.pole && a == 0 && idx[0] + 2 * s < self.counts[0] {
            // fourth order keeps the 1/ρ terms second-order accurate near the pole
            let c = 1.0 / (12.0 * h);
            return vec![
                (si, 8.0 * c),
                (-si, -8.0 * c),
                (2 * si, -c),
                (-2 * si, c),
            ];
        }
        let c = 1.0 / (2.0 * h);
        vec![(si, c), (-si, -c)]
    }

    fn axis_second(&self, a: usize, s: usize) -> Vec<(isize, f64)> {
        let h = self.spacing[a] * s as f64;
        let si = s as isize;
        let den = if self.periodic[a] {
            let omega = 2.0 * std::f64::consts::PI / self.chart.axes()[a].extent();
            2.0 * (1.0 - (omega * h).cos()) / (omega * omega)
        } else {
            h * h
        };
        vec![(si, 1.0 / den), (0, -2.0 / den), (-si, 1.0 / den)]
    }

    fn coordinate_stencil(&self, node: usize, s: usize) -> Result<Stencil> {
        let n = self.dim();
        let idx = self.multi_index(node);
        let base: Vec<isize> = idx.iter().map(|&i| i as isize).collect();
        let lookup = |offs: &[(usize, isize)]| -> Result<usize> {
            let mut m = base.clone();
            for &(a, o) in offs {
                m[a] += o;
            }
            self.neighbor(&m).ok_or_else(|| PmcError::IncompleteStencil {
                node,
                reason: format!("offset {offs:?} leaves the grid"),
            })
        };
        let firsts: Vec<Vec<(isize, f64)>> = (0..n).map(|a| self.axis_first(&idx, a, s)).collect();
        let mut first = Vec::with_capacity(n);
        for (a, f) in firsts.iter().enumerate() {
            let mut w = Vec::with_capacity(f.len());
            for &(o, c) in f {
                w.push((lookup(&[(a, o)])?, c));
            }
            first.push(w);
        }
        let mut second = vec![Vec::new(); n * n];
        for a in 0..n {
            let mut w = Vec::with_capacity(3);
            for (o, c) in self.axis_second(a, s) {
                w.push((lookup(&[(a, o)])?, c));
            }
            second[a * n + a] = w;
            for b in a + 1..n {
                let mut w = Vec::with_capacity(firsts[a].len() * firsts[b].len());
                for &(oa, ca) in &firsts[a] {
                    for &(ob, cb) in &firsts[b] {
                        w.push((lookup(&[(a, oa), (b, ob)])?, ca * cb));
                    }
                }
                second[b * n + a] = w.clone();
                second[a * n + b] = w;
            }
        }
        Ok(Stencil { first, second })
    }

    fn pole_stencil(&self, s: usize) -> Result<Stencil> {
        let nt = self.counts[1];
        if s >= self.counts[0] {
            return Err(PmcError::IncompleteStencil {
                node: 0,
                reason: format!("ring {s} does not exist"),
            });
        }
        let r = self.spacing[0] * s as f64;
        let th0 = self.chart.axes()[1].lower;
        let ntf = nt as f64;
        let mut gx = Vec::with_capacity(nt);
        let mut gy = Vec::with_capacity(nt);
        let mut xx = Vec::with_capacity(nt + 1);
        let mut yy = Vec::with_capacity(nt + 1);
        let mut xy = Vec::with_capacity(nt);
        let lap_ring = 4.0 / (ntf * r * r);
        for j in 0..nt {
            let th = th0 + j as f64 * self.spacing[1];
            let q = self.node_at(&[s, j]);
            gx.push((q, 2.0 * th.cos() / (ntf * r)));
            gy.push((q, 2.0 * th.sin() / (ntf * r)));
            let diff = 8.0 * (2.0 * th).cos() / (ntf * r * r);
            xx.push((q, 0.5 * (lap_ring + diff)));
            yy.push((q, 0.5 * (lap_ring - diff)));
            xy.push((q, 4.0 * (2.0 * th).sin() / (ntf * r * r)));
        }
        let centre = -2.0 / (r * r);
        xx.push((0, centre));
        yy.push((0, centre));
        Ok(Stencil {
            first: vec![gx, gy],
            second: vec![xx, xy.clone(), xy, yy],
        })
    }
}

fn unflatten(mut node: usize, strides: &[usize], idx: &mut [usize]) {
    for (a, &s) in strides.iter().enumerate() {
        idx[a] = node / s;
        node %= s;
    }
}

fn index_names(n: usize) -> Vec<String> {
    const LETTERS: [&str; 4] = ["i", "j", "k", "l"];
    if n <= LETTERS.len() {
        LETTERS[..n].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|a| format!("i{a}")).collect()
    }
}

/// One scalar value per grid node.
#[derive(Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("chart", &self.chart.kind())
            .field("counts", &self.counts)
            .field("spacing", &self.spacing)
            .field("pole", &self.pole)
            .field("unknowns", &self.unknowns.len())
            .finish_non_exhaustive()
    }
}

impl fmt::Debug for GridFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridFunction")
            .field("grid", &self.grid)
            .field("min", &self.min())
            .field("max", &self.max())
            .finish_non_exhaustive()
    }
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(PmcError::InvalidGrid(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(PmcError::InvalidGrid(format!("non-finite value at node {p}")));
        }
        if grid.has_pole() {
            let nt = grid.counts()[1];
            if let Some(j) = (1..nt).find(|&j| values[j] != values[0]) {
                return Err(PmcError::InvalidGrid(format!(
                    "pole replica at node {j} differs from the pole value"
                )));
            }
        }
        Ok(GridFunction { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        GridFunction { grid, values }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at node coordinates. Pole replicas take the value at the
    /// first pole node.
    pub fn from_fn(grid: Arc<Grid>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut values: Vec<f64> = (0..grid.len()).map(|p| f(&grid.coords(p))).collect();
        if grid.has_pole() {
            let v0 = values[0];
            values[..grid.counts()[1]].fill(v0);
        }
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Sets a node value; on pole grids writing any pole replica writes all.
    pub fn set(&mut self, node: usize, v: f64) {
        if self.grid.kind(node) == NodeKind::Pole {
            let nt = self.grid.counts()[1];
            self.values[..nt].fill(v);
        } else {
            self.values[node] = v;
        }
    }

    pub fn unknown_values(&self) -> Vec<f64> {
        self.grid.unknowns().iter().map(|&p| self.values[p]).collect()
    }

    /// Writes unknown values back to their nodes, replicating the pole.
    pub fn set_unknowns(&mut self, x: &[f64]) {
        let grid = Arc::clone(&self.grid);
        for (k, &p) in grid.unknowns().iter().enumerate() {
            self.values[p] = x[k];
        }
        if grid.has_pole() {
            let v0 = self.values[0];
            self.values[..grid.counts()[1]].fill(v0);
        }
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.check_same(&other.grid)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Raw coordinate partials `∂_a u` at a non-boundary node.
    pub fn partials(&self, node: usize) -> Result<Vec<f64>> {
        let st = self.grid.stencil(node, 1)?;
        Ok(st.apply_first(&self.values))
    }

    /// Contravariant gradient `σ^{ij} ∂_j u`. At the pole the components are
    /// Cartesian.
    pub fn gradient(&self, node: usize) -> Result<Vec<f64>> {
        let d = self.partials(node)?;
        Ok(self.grid.node_geometry(node).raise(&d))
    }

    /// Metric norm `|∇u|`.
    pub fn gradient_norm(&self, node: usize) -> Result<f64> {
        let d = self.partials(node)?;
        let up = self.grid.node_geometry(node).raise(&d);
        Ok(d.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
    }

    /// Covariant Hessian `u_{i;j} = ∂_i ∂_j u - Γ^k_ij ∂_k u`.
    pub fn covariant_hessian(&self, node: usize) -> Result<DMatrix<f64>> {
        let st = self.grid.stencil(node, 1)?;
        let n = self.grid.dim();
        let d = st.apply_first(&self.values);
        let dd = st.apply_second(&self.values);
        let g = &self.grid.node_geometry(node).christoffel;
        Ok(DMatrix::from_fn(n, n, |i, j| {
            dd[i * n + j] - (0..n).map(|k| g.get(k, i, j) * d[k]).sum::<f64>()
        }))
    }

    /// Tensor-product cubic interpolation at chart coordinates `x`.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        let grid = &self.grid;
        let n = grid.dim();
        if x.len() != n {
            return Err(PmcError::OutOfRange(format!("point of dimension {}", x.len())));
        }
        let axes = grid.chart.axes();
        let mut bases = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for a in 0..n {
            let t = (x[a] - axes[a].lower) / grid.spacing[a];
            let c = grid.counts[a] as isize;
            let base = if grid.periodic[a] {
                t.floor() as isize - 1
            } else {
                let tol = 1e-9;
                if t < -tol || t > (c - 1) as f64 + tol {
                    return Err(PmcError::OutOfRange(format!(
                        "coordinate {} = {} outside [{}, {}]",
                        a, x[a], axes[a].lower, axes[a].upper
                    )));
                }
                let lo = if grid.pole && a == 0 { -1 } else { 0 };
                (t.floor() as isize - 1).clamp(lo, c - 4)
            };
            let w: Vec<f64> = (0..4)
                .map(|m| {
                    let xm = (base + m) as f64;
                    (0..4)
                        .filter(|&l| l != m)
                        .map(|l| {
                            let xl = (base + l) as f64;
                            (t - xl) / (xm - xl)
                        })
                        .product()
                })
                .collect();
            bases.push(base);
            weights.push(w);
        }
        let mut total = 0.0;
        let mut off = vec![0isize; n];
        let mut idx = vec![0isize; n];
        loop {
            let mut w = 1.0;
            for a in 0..n {
                idx[a] = bases[a] + off[a];
                w *= weights[a][off[a] as usize];
            }
            let node = grid
                .neighbor(&idx)
                .ok_or_else(|| PmcError::OutOfRange(format!("interpolation index {idx:?}")))?;
            total += w * self.values[node];
            let mut a = n;
            loop {
                if a == 0 {
                    return Ok(total);
                }
                a -= 1;
                off[a] += 1;
                if off[a] < 4 {
                    break;
                }
                off[a] = 0;
            }
        }
    }

    /// CSV with header `i,j,...,<coordinate names>,value`, row-major order,
    /// 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.grid.dim();
        let mut header = index_names(n);
        header.extend(self.grid.chart.coordinate_names().iter().cloned());
        header.push("value".into());
        writeln!(out, "{}", header.join(","))?;
        for p in 0..self.grid.len() {
            let idx = self.grid.multi_index(p);
            let x = self.grid.coords(p);
            let mut line = String::new();
            for i in &idx {
                line.push_str(&i.to_string());
                line.push(',');
            }
            for c in &x {
                line.push_str(&format!("{c:.16e},"));
            }
            line.push_str(&format!("{:.16e}", self.values[p]));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(grid: Arc<Grid>, input: R) -> Result<Self> {
        let n = grid.dim();
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| PmcError::Parse("empty CSV".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() != 2 * n + 1 || cols.last() != Some(&"value") {
            return Err(PmcError::Parse(format!("unexpected CSV header `{header}`")));
        }
        let mut values = Vec::with_capacity(grid.len());
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 * n + 1 {
                return Err(PmcError::Parse(format!("row {row}: {} fields", fields.len())));
            }
            let expect = grid.multi_index(values.len());
            for a in 0..n {
                let i: usize = fields[a]
                    .trim()
                    .parse()
                    .map_err(|e| PmcError::Parse(format!("row {row}: {e}")))?;
                if i != expect[a] {
                    return Err(PmcError::Parse(format!(
                        "row {row}: index {i} on axis {a}, expected {}",
                        expect[a]
                    )));
                }
            }
            let v: f64 = fields[2 * n]
                .trim()
                .parse()
                .map_err(|e| PmcError::Parse(format!("row {row}: {e}")))?;
            values.push(v);
        }
        GridFunction::new(grid, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_chart, ChartKind, ChartParams};
    use std::f64::consts::PI;

    fn euclid_grid(m: usize) -> Arc<Grid> {
        let c = make_chart(ChartKind::Euclidean, 2, &ChartParams::default()).unwrap();
        Arc::new(Grid::new(Arc::new(c), &[m, m]).unwrap())
    }

    fn disc_grid(kind: ChartKind, r: f64, nr: usize, nt: usize) -> Arc<Grid> {
        let c = make_chart(kind, 2, &ChartParams::disc(r)).unwrap();
        Arc::new(Grid::new(Arc::new(c), &[nr, nt]).unwrap())
    }

    #[test]
    fn node_classification() {
        let g = euclid_grid(5);
        assert_eq!(g.len(), 25);
        assert_eq!(g.num_unknowns(), 9);
        assert_eq!(g.kind(0), NodeKind::Dirichlet);
        assert_eq!(g.kind(12), NodeKind::Interior);
        let d = disc_grid(ChartKind::HyperbolicPolar, 1.0, 9, 16);
        assert_eq!(d.kind(3), NodeKind::Pole);
        assert_eq!(d.unknown_of(5), Some(0));
        assert_eq!(d.num_unknowns(), 1 + 7 * 16);
        assert_eq!(d.dirichlet_nodes().count(), 16);
    }

    #[test]
    fn grid_errors() {
        let c = Arc::new(make_chart(ChartKind::Euclidean, 2, &ChartParams::default()).unwrap());
        assert!(Grid::new(c.clone(), &[2, 5]).is_err());
        assert!(Grid::new(c, &[5]).is_err());
        let p = Arc::new(make_chart(ChartKind::HyperbolicPolar, 2, &ChartParams::disc(1.0)).unwrap());
        assert!(Grid::new(p.clone(), &[5, 6]).is_err());
        assert!(Grid::new(p, &[5, 9]).is_err());
    }

    #[test]
    fn linear_gradient_exact() {
        let g = euclid_grid(9);
        let f = GridFunction::from_fn(g.clone(), |x| x[0]);
        for &p in g.unknowns() {
            let gr = f.gradient(p).unwrap();
            assert!((gr[0] - 1.0).abs() < 1e-12 && gr[1].abs() < 1e-12);
        }
        assert!(matches!(f.gradient(0), Err(PmcError::BoundaryNode(0))));
        let c = GridFunction::constant(g.clone(), 3.0);
        assert!(c.gradient(40).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn quadratic_hessian_exact() {
        let g = euclid_grid(9);
        let f = GridFunction::from_fn(g.clone(), |x| x[0] * x[0] + 3.0 * x[0] * x[1]);
        for &p in g.unknowns() {
            let h = f.covariant_hessian(p).unwrap();
            assert!((h[(0, 0)] - 2.0).abs() < 1e-11);
            assert!((h[(0, 1)] - 3.0).abs() < 1e-11);
            assert!(h[(1, 1)].abs() < 1e-11);
        }
    }

    #[test]
    fn radial_function_on_hyperbolic_grid() {
        let g = disc_grid(ChartKind::HyperbolicPolar, 1.5, 41, 32);
        let f = GridFunction::from_fn(g.clone(), |x| x[0]);
        for ring in [5usize, 20, 35] {
            let p = g.node_at(&[ring, 3]);
            let x = g.coords(p);
            let gr = f.gradient(p).unwrap();
            assert!((gr[0] - 1.0).abs() < 1e-12 && gr[1].abs() < 1e-12);
            let h = f.covariant_hessian(p).unwrap();
            let expect = x[0].sinh() * x[0].cosh();
            assert!((h[(1, 1)] - expect).abs() < 1e-10, "{} vs {}", h[(1, 1)], expect);
            assert!(h[(0, 0)].abs() < 1e-10);
        }
    }

    #[test]
    fn pole_derivatives_of_quadratics() {
        let g = disc_grid(ChartKind::Euclidean, 0.5, 17, 16);
        let f = GridFunction::from_fn(g.clone(), |x| {
            let (px, py) = (x[0] * x[1].cos(), x[0] * x[1].sin());
            1.0 + 2.0 * px - py + 0.5 * px * px + 3.0 * px * py - 2.0 * py * py
        });
        let gr = f.gradient(0).unwrap();
        assert!((gr[0] - 2.0).abs() < 1e-11 && (gr[1] + 1.0).abs() < 1e-11);
        let h = f.covariant_hessian(0).unwrap();
        assert!((h[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((h[(0, 1)] - 3.0).abs() < 1e-9);
        assert!((h[(1, 1)] + 4.0).abs() < 1e-9);
    }

    #[test]
    fn hessian_second_order_convergence() {
        // Hessian of x^3 + sin(y) e^x on the unit square, error at interior nodes
        let err = |m: usize| {
            let g = euclid_grid(m);
            let f = GridFunction::from_fn(g.clone(), |x| x[0].powi(3) + x[1].sin() * x[0].exp());
            let mut e: f64 = 0.0;
            for &p in g.unknowns() {
                let x = g.coords(p);
                let h = f.covariant_hessian(p).unwrap();
                let ex = [
                    6.0 * x[0] + x[1].sin() * x[0].exp(),
                    x[1].cos() * x[0].exp(),
                    -x[1].sin() * x[0].exp(),
                ];
                e = e
                    .max((h[(0, 0)] - ex[0]).abs())
                    .max((h[(0, 1)] - ex[1]).abs())
                    .max((h[(1, 1)] - ex[2]).abs());
            }
            e
        };
        let ratio = err(17) / err(33);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn periodic_first_mode_exact() {
        let g = disc_grid(ChartKind::Euclidean, 1.0, 9, 8);
        let f = GridFunction::from_fn(g.clone(), |x| x[1].sin());
        let p = g.node_at(&[4, 3]);
        let th = g.coords(p)[1];
        let d = f.partials(p).unwrap();
        assert!((d[1] - th.cos()).abs() < 1e-13);
        let st = g.stencil(p, 1).unwrap();
        let dd = st.apply_second(f.values());
        assert!((dd[3] + th.sin()).abs() < 1e-12);
    }

    #[test]
    fn reflection_through_pole() {
        let g = disc_grid(ChartKind::Euclidean, 1.0, 9, 16);
        let a = g.neighbor(&[-2, 3]).unwrap();
        assert_eq!(g.multi_index(a), vec![2, 11]);
        assert_eq!(g.neighbor(&[0, 7]), Some(0));
        assert_eq!(g.neighbor(&[9, 0]), None);
        assert_eq!(g.neighbor(&[3, -1]).unwrap(), g.node_at(&[3, 15]));
    }

    #[test]
    fn csv_round_trip() {
        let g = disc_grid(ChartKind::HyperbolicPolar, 1.0, 9, 16);
        let f = GridFunction::from_fn(g.clone(), |x| (x[0] * 7.3).sin() / 3.0 + x[1].cos() * 1e-7);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("i,j,rho,theta,value\n"));
        let back = GridFunction::read_csv(g, buf.as_slice()).unwrap();
        assert_eq!(back.values(), f.values());
    }

    #[test]
    fn interpolation_accuracy() {
        let g = disc_grid(ChartKind::Euclidean, 1.0, 33, 64);
        let exact = |r: f64, t: f64| {
            let (x, y) = (r * t.cos(), r * t.sin());
            x * x * y + 0.3 * x - y * y
        };
        let f = GridFunction::from_fn(g.clone(), |x| exact(x[0], x[1]));
        for &(r, t) in &[(0.0, 0.0), (0.01, 2.0), (0.37, 1.1), (0.999, 5.9), (1.0, 0.2)] {
            let v = f.interpolate(&[r, t]).unwrap();
            assert!((v - exact(r, t)).abs() < 1e-5, "({r},{t}) {v}");
        }
        assert!(f.interpolate(&[1.2, 0.0]).is_err());
    }

    #[test]
    fn pole_grid_function_rules() {
        let g = disc_grid(ChartKind::Euclidean, 1.0, 9, 8);
        let mut v = vec![0.0; g.len()];
        v[3] = 1.0;
        assert!(GridFunction::new(g.clone(), v).is_err());
        let mut f = GridFunction::zeros(g.clone());
        f.set(5, 2.0);
        assert!(f.values()[..8].iter().all(|&x| x == 2.0));
        let theta_axis_len = g.chart().axes()[1].extent();
        assert!((theta_axis_len - 2.0 * PI).abs() < 1e-15);
    }
}
