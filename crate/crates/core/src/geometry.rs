//! Analytic coordinate charts on the base manifold `M^n`.
//!
//! A chart carries closed-form evaluators for the metric `σ_ij`, its inverse,
//! the Christoffel symbols and the warping function `γ = 1/⟨Y,Y⟩` of the
//! Killing field. Only `γ` and its gradient enter the mean curvature
//! operator; the field `Y` itself is never represented.
//!
//! For a Killing field `Y` one has `∇̄_Y Y = ∇γ / (2γ²)`, which turns the
//! divergence form of the operator into the coordinate form used by
//! [`crate::operator`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{PmcError, Result};

/// Default lower bound of the radial coordinate when the pole is excluded.
pub const DEFAULT_POLE_EPSILON: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChartKind {
    Euclidean,
    HyperbolicPolar,
    Rotational,
    Custom,
}

impl ChartKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChartKind::Euclidean => "euclidean",
            ChartKind::HyperbolicPolar => "hyperbolic_polar",
            ChartKind::Rotational => "rotational",
            ChartKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChartKind {
    type Err = PmcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(ChartKind::Euclidean),
            "hyperbolic_polar" => Ok(ChartKind::HyperbolicPolar),
            "rotational" => Ok(ChartKind::Rotational),
            "custom" => Ok(ChartKind::Custom),
            other => Err(PmcError::UnknownChartKind(other.to_string())),
        }
    }
}

/// One coordinate axis of the chart box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub periodic: bool,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, periodic: bool) -> Self {
        Axis {
            lower,
            upper,
            periodic,
        }
    }

    pub fn extent(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Christoffel symbols `Γ^k_ij`, stored as `data[k * n * n + i * n + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Christoffel {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.data[(k * self.n + i) * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Closed-form geometry evaluators of a chart.
///
/// `gamma_partials` returns the coordinate partials `∂_i γ`; the
/// contravariant gradient is obtained by raising with the inverse metric.
pub trait Geometry: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn metric(&self, x: &[f64]) -> DMatrix<f64>;
    fn inverse_metric(&self, x: &[f64]) -> DMatrix<f64>;
    fn christoffel(&self, x: &[f64]) -> Christoffel;
    fn gamma(&self, x: &[f64]) -> f64;
    fn gamma_partials(&self, x: &[f64]) -> Vec<f64>;

    /// Geodesic distance, when known in closed form.
    fn distance(&self, _a: &[f64], _b: &[f64]) -> Option<f64> {
        None
    }
}

/// Radial profile `f` of a polar metric `dρ² + f(ρ)² g_{S^{n-1}}` together
/// with the radial warping function of the ambient product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadialProfile {
    /// `f(ρ) = ρ`, `γ ≡ 1`: Euclidean space in polar coordinates.
    Flat,
    /// `f(ρ) = sinh ρ`, `γ = 1/cosh² ρ`: hyperbolic space around the foot of
    /// the axis of the translation isometries.
    Hyperbolic,
}

impl RadialProfile {
    pub fn f(&self, rho: f64) -> f64 {
        match self {
            RadialProfile::Flat => rho,
            RadialProfile::Hyperbolic => rho.sinh(),
        }
    }

    pub fn df(&self, rho: f64) -> f64 {
        match self {
            RadialProfile::Flat => 1.0,
            RadialProfile::Hyperbolic => rho.cosh(),
        }
    }

    pub fn gamma(&self, rho: f64) -> f64 {
        match self {
            RadialProfile::Flat => 1.0,
            RadialProfile::Hyperbolic => {
                let c = rho.cosh();
                1.0 / (c * c)
            }
        }
    }

    /// `∂γ/∂ρ`.
    pub fn dgamma(&self, rho: f64) -> f64 {
        match self {
            RadialProfile::Flat => 0.0,
            RadialProfile::Hyperbolic => {
                let c = rho.cosh();
                -2.0 * rho.tanh() / (c * c)
            }
        }
    }
}

/// Diagonal metric helper: Christoffels from `g_m` and `dg[m][l] = ∂_l g_m`.
fn diagonal_christoffel(g: &[f64], dg: &[Vec<f64>]) -> Christoffel {
    let n = g.len();
    let mut c = Christoffel::zeros(n);
    for k in 0..n {
        let inv2 = 0.5 / g[k];
        for i in 0..n {
            if i == k {
                for j in 0..n {
                    // Γ^k_kj = Γ^k_jk = ∂_j g_kk / (2 g_kk)
                    let v = dg[k][j] * inv2;
                    c.set(k, k, j, v);
                    c.set(k, j, k, v);
                }
            } else {
                // Γ^k_ii = -∂_k g_ii / (2 g_kk), i ≠ k
                c.set(k, i, i, -dg[i][k] * inv2);
            }
        }
    }
    c
}

#[derive(Debug)]
struct Cartesian {
    n: usize,
}

impl Geometry for Cartesian {
    fn dim(&self) -> usize {
        self.n
    }
    fn metric(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }
    fn inverse_metric(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }
    fn christoffel(&self, _x: &[f64]) -> Christoffel {
        Christoffel::zeros(self.n)
    }
    fn gamma(&self, _x: &[f64]) -> f64 {
        1.0
    }
    fn gamma_partials(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.n]
    }
    fn distance(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        Some(euclidean_distance(a, b))
    }
}

/// Flat half-space `x_n > 0` rotated about the codimension-two axis
/// `x_n = 0`; the Killing field is the rotation, so `|Y| = x_n`.
#[derive(Debug)]
struct Rotational {
    n: usize,
}

impl Geometry for Rotational {
    fn dim(&self) -> usize {
        self.n
    }
    fn metric(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }
    fn inverse_metric(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }
    fn christoffel(&self, _x: &[f64]) -> Christoffel {
        Christoffel::zeros(self.n)
    }
    fn gamma(&self, x: &[f64]) -> f64 {
        let r = x[self.n - 1];
        1.0 / (r * r)
    }
    fn gamma_partials(&self, x: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        let r = x[self.n - 1];
        d[self.n - 1] = -2.0 / (r * r * r);
        d
    }
    fn distance(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        Some(euclidean_distance(a, b))
    }
}

/// Geodesic polar coordinates `(ρ, θ_1, …, θ_{n-1})` with metric
/// `dρ² + f(ρ)² (dθ_1² + sin²θ_1 dθ_2² + …)`.
#[derive(Debug)]
struct WarpedPolar {
    n: usize,
    profile: RadialProfile,
}

impl WarpedPolar {
    fn diagonal(&self, x: &[f64]) -> Vec<f64> {
        let f = self.profile.f(x[0]);
        let mut g = vec![1.0; self.n];
        let mut prod = f * f;
        for m in 1..self.n {
            g[m] = prod;
            let s = x[m].sin();
            prod *= s * s;
        }
        g
    }

    fn diagonal_partials(&self, x: &[f64], g: &[f64]) -> Vec<Vec<f64>> {
        let rho = x[0];
        let log_df = 2.0 * self.profile.df(rho) / self.profile.f(rho);
        let mut dg = vec![vec![0.0; self.n]; self.n];
        for m in 1..self.n {
            dg[m][0] = log_df * g[m];
            for l in 1..m {
                dg[m][l] = 2.0 * g[m] * x[l].cos() / x[l].sin();
            }
        }
        dg
    }

    fn unit_direction(&self, x: &[f64]) -> Vec<f64> {
        // standard spherical angles, the last one azimuthal
        let k = self.n - 1;
        let mut e = vec![1.0; self.n];
        let mut prod = 1.0;
        for l in 0..k {
            let th = x[l + 1];
            if l + 1 == k {
                e[l] = prod * th.cos();
                e[l + 1] = prod * th.sin();
            } else {
                e[l] = prod * th.cos();
                prod *= th.sin();
            }
        }
        e
    }
}

impl Geometry for WarpedPolar {
    fn dim(&self) -> usize {
        self.n
    }

    fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.diagonal(x)))
    }

    fn inverse_metric(&self, x: &[f64]) -> DMatrix<f64> {
        let g = self.diagonal(x);
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.n,
            g.iter().map(|v| 1.0 / v),
        ))
    }

    fn christoffel(&self, x: &[f64]) -> Christoffel {
        let g = self.diagonal(x);
        let dg = self.diagonal_partials(x, &g);
        diagonal_christoffel(&g, &dg)
    }

    fn gamma(&self, x: &[f64]) -> f64 {
        self.profile.gamma(x[0])
    }

    fn gamma_partials(&self, x: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        d[0] = self.profile.dgamma(x[0]);
        d
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        let ea = self.unit_direction(a);
        let eb = self.unit_direction(b);
        let cos_angle: f64 = ea.iter().zip(&eb).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0);
        let (r1, r2) = (a[0], b[0]);
        let d = match self.profile {
            RadialProfile::Flat => {
                (r1 * r1 + r2 * r2 - 2.0 * r1 * r2 * cos_angle).max(0.0).sqrt()
            }
            RadialProfile::Hyperbolic => {
                let c = r1.cosh() * r2.cosh() - r1.sinh() * r2.sinh() * cos_angle;
                c.max(1.0).acosh()
            }
        };
        Some(d)
    }
}

fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Construction parameters for [`make_chart`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChartParams {
    /// Per-axis `(lower, upper)` bounds. Defaults depend on the kind.
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Euclidean charts only: use polar instead of Cartesian coordinates.
    pub polar: bool,
    /// Include the pole `ρ = 0` as a single shared node (polar charts, n = 2).
    pub pole_patch: bool,
    /// Minimum admissible `ρ` when the pole is excluded.
    pub pole_epsilon: f64,
}

impl Default for ChartParams {
    fn default() -> Self {
        ChartParams {
            bounds: None,
            polar: false,
            pole_patch: false,
            pole_epsilon: DEFAULT_POLE_EPSILON,
        }
    }
}

impl ChartParams {
    /// Geodesic disc of the given radius around the pole, with the pole patch.
    pub fn disc(radius: f64) -> Self {
        ChartParams {
            bounds: Some(vec![(0.0, radius), (0.0, 2.0 * std::f64::consts::PI)]),
            polar: true,
            pole_patch: true,
            ..Default::default()
        }
    }

    pub fn with_bounds(bounds: Vec<(f64, f64)>) -> Self {
        ChartParams {
            bounds: Some(bounds),
            ..Default::default()
        }
    }
}

/// A coordinate chart: kind tag, coordinate box and analytic evaluators.
#[derive(Clone, Debug)]
pub struct Chart {
    kind: ChartKind,
    axes: Vec<Axis>,
    names: Vec<String>,
    geometry: Arc<dyn Geometry>,
    pole_patch: bool,
    radial: Option<RadialProfile>,
}

impl Chart {
    /// Wraps a user-supplied geometry as a `custom` chart.
    pub fn custom(geometry: Arc<dyn Geometry>, axes: Vec<Axis>, names: Vec<String>) -> Result<Self> {
        let n = geometry.dim();
        if n == 0 || axes.len() != n || names.len() != n {
            return Err(PmcError::InvalidChart(format!(
                "custom chart of dimension {n} needs {n} axes and names"
            )));
        }
        validate_axes(&axes)?;
        Ok(Chart {
            kind: ChartKind::Custom,
            axes,
            names,
            geometry,
            pole_patch: false,
            radial: None,
        })
    }

    pub fn kind(&self) -> ChartKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn coordinate_names(&self) -> &[String] {
        &self.names
    }

    pub fn has_pole_patch(&self) -> bool {
        self.pole_patch
    }

    /// Radial profile for polar charts.
    pub fn radial_profile(&self) -> Option<RadialProfile> {
        self.radial
    }

    pub fn is_polar(&self) -> bool {
        self.radial.is_some()
    }

    pub fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        self.geometry.metric(x)
    }

    pub fn inverse_metric(&self, x: &[f64]) -> DMatrix<f64> {
        self.geometry.inverse_metric(x)
    }

    pub fn christoffel(&self, x: &[f64]) -> Christoffel {
        self.geometry.christoffel(x)
    }

    pub fn gamma(&self, x: &[f64]) -> f64 {
        self.geometry.gamma(x)
    }

    /// Coordinate partials `∂_i γ`.
    pub fn gamma_partials(&self, x: &[f64]) -> Vec<f64> {
        self.geometry.gamma_partials(x)
    }

    /// Contravariant gradient `∇γ^i = σ^{ij} ∂_j γ`.
    pub fn grad_gamma(&self, x: &[f64]) -> Vec<f64> {
        let inv = self.inverse_metric(x);
        let d = self.gamma_partials(x);
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| inv[(i, j)] * d[j]).sum()).collect()
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        self.geometry.distance(a, b)
    }
}

fn validate_axes(axes: &[Axis]) -> Result<()> {
    for (i, a) in axes.iter().enumerate() {
        if !(a.lower.is_finite() && a.upper.is_finite()) || a.upper <= a.lower {
            return Err(PmcError::InvalidChart(format!(
                "axis {i}: degenerate interval [{}, {}]",
                a.lower, a.upper
            )));
        }
    }
    Ok(())
}

/// Builds one of the built-in charts.
pub fn make_chart(kind: ChartKind, n: usize, params: &ChartParams) -> Result<Chart> {
    use std::f64::consts::PI;

    if n == 0 {
        return Err(PmcError::InvalidChart("dimension must be at least 1".into()));
    }
    let bounds = params.bounds.clone();
    if let Some(b) = &bounds {
        if b.len() != n {
            return Err(PmcError::InvalidChart(format!(
                "expected {n} coordinate bounds, got {}",
                b.len()
            )));
        }
    }

    let polar = match kind {
        ChartKind::Euclidean => params.polar,
        ChartKind::HyperbolicPolar => true,
        ChartKind::Rotational => false,
        ChartKind::Custom => {
            return Err(PmcError::InvalidChart(
                "custom charts are built with Chart::custom".into(),
            ))
        }
    };

    if !polar {
        if params.pole_patch {
            return Err(PmcError::InvalidChart(
                "the pole patch is only available for polar charts".into(),
            ));
        }
        let b = bounds.unwrap_or_else(|| match kind {
            ChartKind::Rotational => {
                let mut v = vec![(-1.0, 1.0); n];
                v[n - 1] = (1.0, 2.0);
                v
            }
            _ => vec![(0.0, 1.0); n],
        });
        let axes: Vec<Axis> = b.iter().map(|&(l, u)| Axis::new(l, u, false)).collect();
        validate_axes(&axes)?;
        let names = (1..=n).map(|i| format!("x{i}")).collect();
        let geometry: Arc<dyn Geometry> = match kind {
            ChartKind::Rotational => {
                if axes[n - 1].lower <= 0.0 {
                    return Err(PmcError::InvalidChart(format!(
                        "rotational chart needs a positive distance to the axis, got x{n} >= {}",
                        axes[n - 1].lower
                    )));
                }
                Arc::new(Rotational { n })
            }
            _ => Arc::new(Cartesian { n }),
        };
        return Ok(Chart {
            kind,
            axes,
            names,
            geometry,
            pole_patch: false,
            radial: None,
        });
    }

    if n < 2 {
        return Err(PmcError::InvalidChart(
            "polar charts need dimension at least 2".into(),
        ));
    }
    let profile = if kind == ChartKind::HyperbolicPolar {
        RadialProfile::Hyperbolic
    } else {
        RadialProfile::Flat
    };
    let mut axes = Vec::with_capacity(n);
    let eps = params.pole_epsilon;
    for i in 0..n {
        let default = if i == 0 {
            (if params.pole_patch { 0.0 } else { eps }, 1.0)
        } else if i == n - 1 {
            (0.0, 2.0 * PI)
        } else {
            (eps, PI - eps)
        };
        let (l, u) = bounds.as_ref().map(|b| b[i]).unwrap_or(default);
        let periodic = i == n - 1 && ((u - l) - 2.0 * PI).abs() < 1e-12;
        axes.push(Axis::new(l, u, periodic));
    }
    validate_axes(&axes)?;
    if params.pole_patch {
        if n != 2 {
            return Err(PmcError::InvalidChart(
                "the pole patch is implemented for n = 2 only".into(),
            ));
        }
        if axes[0].lower != 0.0 {
            return Err(PmcError::InvalidChart(
                "the pole patch requires the radial interval to start at 0".into(),
            ));
        }
        if !axes[1].periodic {
            return Err(PmcError::InvalidChart(
                "the pole patch requires a full periodic angular axis".into(),
            ));
        }
    } else if axes[0].lower < eps {
        return Err(PmcError::InvalidChart(format!(
            "radial interval [{}, {}] reaches the pole; enable the pole patch or start at rho >= {eps}",
            axes[0].lower, axes[0].upper
        )));
    }
    for (i, a) in axes.iter().enumerate().take(n - 1).skip(1) {
        if a.lower < eps || a.upper > PI - eps {
            return Err(PmcError::InvalidChart(format!(
                "polar angle axis {i} must stay inside (0, pi)"
            )));
        }
    }
    let mut names = vec!["rho".to_string()];
    if n == 2 {
        names.push("theta".into());
    } else {
        names.extend((1..n).map(|i| format!("theta{i}")));
    }
    Ok(Chart {
        kind,
        axes,
        names,
        geometry: Arc::new(WarpedPolar { n, profile }),
        pole_patch: params.pole_patch,
        radial: Some(profile),
    })
}

/// Geodesic curvature `κ = γ'/(2γ) = tanh ρ` of the normalized flow lines,
/// `'` being the derivative along the inward distance `d = ρ_k - ρ`.
pub fn flow_line_curvature(chart: &Chart, rho: f64) -> Result<f64> {
    if chart.kind() != ChartKind::HyperbolicPolar {
        return Err(PmcError::WrongChartKind {
            expected: "hyperbolic_polar",
            got: chart.kind().to_string(),
        });
    }
    if !(rho >= 0.0) {
        return Err(PmcError::OutOfRange(format!("rho = {rho} must be >= 0")));
    }
    Ok(rho.tanh())
}

/// Inward mean curvature of the Killing cylinder over a sphere centred at the
/// origin (Euclidean) or at the pole (polar charts).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CylinderCurvature {
    n: usize,
    profile: RadialProfile,
    polar: bool,
}

impl CylinderCurvature {
    pub fn for_chart(chart: &Chart) -> Result<Self> {
        let profile = match (chart.kind(), chart.radial_profile()) {
            (_, Some(p)) => p,
            (ChartKind::Euclidean, None) => RadialProfile::Flat,
            (k, None) => {
                return Err(PmcError::WrongChartKind {
                    expected: "euclidean or hyperbolic_polar",
                    got: k.to_string(),
                })
            }
        };
        Ok(CylinderCurvature {
            n: chart.dim(),
            profile,
            polar: chart.is_polar(),
        })
    }

    /// `((n-1) f'/f - ∂_ργ/(2γ)) / n`. For hyperbolic space this is
    /// `((n-1) coth ρ + tanh ρ)/n`, for Euclidean space `(n-1)/(nρ)`.
    pub fn at_radius(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0) {
            return Err(PmcError::OutOfRange(format!("rho = {rho} must be > 0")));
        }
        let p = &self.profile;
        let n = self.n as f64;
        let sphere = p.df(rho) / p.f(rho);
        let kappa = -p.dgamma(rho) / (2.0 * p.gamma(rho));
        Ok(((n - 1.0) * sphere + kappa) / n)
    }

    /// Evaluates at a boundary point given in chart coordinates.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let rho = if self.polar {
            x[0]
        } else {
            x.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        self.at_radius(rho)
    }

    pub fn validity(&self) -> &'static str {
        match self.profile {
            RadialProfile::Flat => "spheres |x| = rho > 0 centred at the origin",
            RadialProfile::Hyperbolic => "geodesic spheres of radius rho > 0 around the pole",
        }
    }
}

pub fn cylinder_mean_curvature(chart: &Chart, x: &[f64]) -> Result<f64> {
    CylinderCurvature::for_chart(chart)?.evaluate(x)
}

/// Ricci tensor `R_ij` from central differences of the analytic Christoffels.
pub fn ricci_tensor(chart: &Chart, x: &[f64], step: f64) -> DMatrix<f64> {
    let n = chart.dim();
    let g = chart.christoffel(x);
    let mut dgs = Vec::with_capacity(n);
    for l in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[l] += step;
        xm[l] -= step;
        let cp = chart.christoffel(&xp);
        let cm = chart.christoffel(&xm);
        let d: Vec<f64> = cp
            .as_slice()
            .iter()
            .zip(cm.as_slice())
            .map(|(a, b)| (a - b) / (2.0 * step))
            .collect();
        dgs.push(d);
    }
    let dg = |l: usize, k: usize, i: usize, j: usize| dgs[l][(k * n + i) * n + j];
    let mut ric = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += dg(k, k, i, j) - dg(j, k, i, k);
                for l in 0..n {
                    s += g.get(k, k, l) * g.get(l, i, j) - g.get(k, j, l) * g.get(l, i, k);
                }
            }
            ric[(i, j)] = s;
        }
    }
    (&ric + ric.transpose()) * 0.5
}

/// Minimum over the samples of the smallest eigenvalue of `σ^{-1} Ric`.
/// Diagnostic only.
pub fn ricci_lower_bound_probe(chart: &Chart, samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(PmcError::OutOfRange("empty sample set".into()));
    }
    let mut lo = f64::INFINITY;
    for x in samples {
        let ric = ricci_tensor(chart, x, 1e-4);
        let sigma = chart.metric(x);
        let chol = sigma.clone().cholesky().ok_or_else(|| {
            PmcError::InvalidChart(format!("metric not positive definite at {x:?}"))
        })?;
        let l = chol.l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| PmcError::InvalidChart("singular metric".into()))?;
        let m = &linv * ric * linv.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(m);
        lo = lo.min(eig.eigenvalues.min());
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn hyp2() -> Chart {
        make_chart(ChartKind::HyperbolicPolar, 2, &ChartParams::disc(2.0)).unwrap()
    }

    #[test]
    fn euclidean_gamma_is_one() {
        let c = make_chart(ChartKind::Euclidean, 2, &ChartParams::default()).unwrap();
        assert_eq!(c.gamma(&[0.3, 0.7]), 1.0);
        assert_eq!(c.grad_gamma(&[0.3, 0.7]), vec![0.0, 0.0]);
    }

    #[test]
    fn hyperbolic_gamma_values() {
        let c = hyp2();
        let rho = 0.5f64.atanh();
        assert!((c.gamma(&[rho, 1.0]) - 0.75).abs() < 1e-15);
        assert_eq!(c.gamma(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn flow_line_curvature_values() {
        let c = hyp2();
        assert_eq!(flow_line_curvature(&c, 0.0).unwrap(), 0.0);
        let rho2 = (1.0f64 - 0.5).atanh();
        assert!((flow_line_curvature(&c, rho2).unwrap() - 0.5).abs() < 1e-15);
        assert!((flow_line_curvature(&c, 1.0).unwrap() - 0.761594155955765).abs() < 1e-12);
        let e = make_chart(ChartKind::Euclidean, 2, &ChartParams::default()).unwrap();
        assert!(matches!(
            flow_line_curvature(&e, 0.1),
            Err(PmcError::WrongChartKind { .. })
        ));
    }

    #[test]
    fn cylinder_curvature_values() {
        let rho2 = 0.5f64.atanh();
        let c = hyp2();
        assert!((cylinder_mean_curvature(&c, &[rho2, 0.0]).unwrap() - 1.25).abs() < 1e-14);
        let c3 = make_chart(ChartKind::HyperbolicPolar, 3, &ChartParams::default()).unwrap();
        assert!((cylinder_mean_curvature(&c3, &[rho2, 1.0, 0.0]).unwrap() - 1.5).abs() < 1e-14);
        let e = make_chart(ChartKind::Euclidean, 2, &ChartParams::default()).unwrap();
        assert!((cylinder_mean_curvature(&e, &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(cylinder_mean_curvature(&c, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn cylinder_curvature_monotone_limits() {
        let cc = CylinderCurvature::for_chart(&hyp2()).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let rho = i as f64 * 0.05;
            let h = cc.at_radius(rho).unwrap();
            assert!(h > 1.0 && h < prev, "{rho} {h} {prev}");
            prev = h;
        }
        assert!(cc.at_radius(1e-6).unwrap() > 1e5);
        assert!((cc.at_radius(30.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chart_errors() {
        assert!(matches!(
            "spherical".parse::<ChartKind>(),
            Err(PmcError::UnknownChartKind(_))
        ));
        let p = ChartParams::with_bounds(vec![(0.0, 1.0), (0.0, 2.0 * PI)]);
        assert!(make_chart(ChartKind::HyperbolicPolar, 2, &p).is_err());
        let r = ChartParams::with_bounds(vec![(0.0, 1.0), (0.0, 1.0)]);
        assert!(make_chart(ChartKind::Rotational, 2, &r).is_err());
        let bad = ChartParams::with_bounds(vec![(1.0, 1.0), (0.0, 1.0)]);
        assert!(make_chart(ChartKind::Euclidean, 2, &bad).is_err());
        let mut pole3 = ChartParams::default();
        pole3.pole_patch = true;
        assert!(make_chart(ChartKind::HyperbolicPolar, 3, &pole3).is_err());
    }

    #[test]
    fn radial_laplacian_from_christoffels() {
        // Δρ = -σ^{ij} Γ^ρ_ij must equal (n-1) coth ρ
        for n in [2usize, 3] {
            let c = make_chart(ChartKind::HyperbolicPolar, n, &ChartParams::default()).unwrap();
            for &rho in &[0.1, 0.7, 2.3] {
                let mut x = vec![rho];
                x.extend(std::iter::repeat(1.1).take(n - 1));
                let inv = c.inverse_metric(&x);
                let g = c.christoffel(&x);
                let mut lap = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        lap -= inv[(i, j)] * g.get(0, i, j);
                    }
                }
                let expect = (n as f64 - 1.0) / rho.tanh();
                assert!((lap - expect).abs() < 1e-8, "n={n} rho={rho}");
            }
        }
    }

    #[test]
    fn ricci_probe_values() {
        let e = make_chart(ChartKind::Euclidean, 2, &ChartParams::default()).unwrap();
        let pts = vec![vec![0.2, 0.3], vec![0.5, 0.9]];
        assert!(ricci_lower_bound_probe(&e, &pts).unwrap().abs() < 1e-12);
        let h = hyp2();
        let pts: Vec<Vec<f64>> = (1..8).map(|i| vec![0.2 * i as f64, 0.4 * i as f64]).collect();
        assert!((ricci_lower_bound_probe(&h, &pts).unwrap() + 1.0).abs() < 1e-4);
        let h3 = make_chart(ChartKind::HyperbolicPolar, 3, &ChartParams::default()).unwrap();
        let pts3 = vec![vec![0.8, 1.0, 2.0], vec![1.5, 0.6, 4.0]];
        assert!((ricci_lower_bound_probe(&h3, &pts3).unwrap() + 2.0).abs() < 1e-4);
        let r = make_chart(ChartKind::Rotational, 2, &ChartParams::default()).unwrap();
        assert!(ricci_lower_bound_probe(&r, &[vec![0.0, 1.5]]).unwrap().is_finite());
        assert!(ricci_lower_bound_probe(&r, &[]).is_err());
    }

    #[test]
    fn hyperbolic_distance_from_pole_is_radius() {
        let c = hyp2();
        let d = c.distance(&[0.0, 0.0], &[1.3, 2.0]).unwrap();
        assert!((d - 1.3).abs() < 1e-12);
        let d2 = c.distance(&[0.5, 0.0], &[0.5, PI]).unwrap();
        assert!((d2 - 1.0).abs() < 1e-12);
    }
}
