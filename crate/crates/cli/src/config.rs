//! Run configuration read from JSON.

use std::path::PathBuf;

use serde::Deserialize;

use pmc_core::solver::{NewtonConfig, SandwichConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Dirichlet,
    Sandwich,
    Asymptotic,
    Barriers,
    VerifySuite,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dirichlet => "dirichlet",
            Mode::Sandwich => "sandwich",
            Mode::Asymptotic => "asymptotic",
            Mode::Barriers => "barriers",
            Mode::VerifySuite => "verify-suite",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub kind: String,
    pub n: usize,
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub polar: bool,
    /// Geodesic disc of this radius around the pole, with the pole patch.
    #[serde(default)]
    pub disc_radius: Option<f64>,
    #[serde(default)]
    pub pole_patch: bool,
    #[serde(default)]
    pub pole_epsilon: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub counts: Vec<usize>,
}

/// Piecewise linear samples in one coordinate.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleTable {
    pub coordinate: String,
    pub samples: Vec<[f64; 2]>,
    /// Wrap around as a function of period `period`.
    #[serde(default)]
    pub period: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant(f64),
    Expression(String),
    Table { table: SampleTable },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_schedule")]
    pub schedule: Vec<u32>,
    #[serde(default = "default_radial")]
    pub radial_per_unit: f64,
    #[serde(default)]
    pub rim_per_unit: Option<f64>,
    #[serde(default = "default_monitored")]
    pub monitored: Vec<u32>,
    #[serde(default = "default_asym_tol")]
    pub tolerance: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub mollify: Option<u32>,
    /// Write one CSV per disc solve.
    #[serde(default)]
    pub per_k_csv: bool,
}

impl Default for AsymptoticSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn default_n() -> usize {
    2
}
fn default_schedule() -> Vec<u32> {
    (2..=8).collect()
}
fn default_radial() -> f64 {
    64.0
}
fn default_monitored() -> Vec<u32> {
    vec![2]
}
fn default_asym_tol() -> f64 {
    1e-3
}
fn default_margin() -> f64 {
    pmc_core::barriers::DEFAULT_MARGIN
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSweepSpec {
    #[serde(default = "default_dims")]
    pub n: Vec<usize>,
    #[serde(default = "default_ks")]
    pub k: Vec<u32>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default, rename = "M0")]
    pub m0: f64,
    /// Prescribed `H` for the supersolution margin, default 0.
    #[serde(default, rename = "H")]
    pub h: Option<f64>,
}

fn default_dims() -> Vec<usize> {
    vec![2]
}
fn default_ks() -> Vec<u32> {
    (2..=10).collect()
}
fn default_samples() -> usize {
    50
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "default_c1", rename = "C1")]
    pub c1: f64,
    /// Ball radius of the gradient certificate.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Centre of the ball; the pole or the box centre by default.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default = "default_cmp_tol")]
    pub comparison_tolerance: f64,
    /// Amplitude of the random perturbation of the second initial guess.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn default_c1() -> f64 {
    2.0
}
fn default_radius() -> f64 {
    0.25
}
fn default_cmp_tol() -> f64 {
    1e-8
}
fn default_perturbation() -> f64 {
    0.1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_solution")]
    pub solution: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("pmc-out")
}
fn default_report() -> String {
    "report.json".into()
}
fn default_solution() -> String {
    "solution.csv".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub chart: Option<ChartSpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default, rename = "H")]
    pub h: Option<FieldSpec>,
    #[serde(default)]
    pub boundary: Option<FieldSpec>,
    #[serde(default)]
    pub solver: NewtonConfig,
    #[serde(default)]
    pub sandwich: SandwichConfig,
    #[serde(default)]
    pub asymptotic: AsymptoticSpec,
    #[serde(default)]
    pub barriers: Option<BarrierSweepSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub output: OutputSpec,
}
