use thiserror::Error;

use crate::mesh::GridFunction;
use crate::solver::SolveReport;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum PmcError {
    #[error("unknown chart kind `{0}`")]
    UnknownChartKind(String),

    #[error("invalid chart parameters: {0}")]
    InvalidChart(String),

    #[error("operation requires a {expected} chart, got {got}")]
    WrongChartKind { expected: &'static str, got: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("node {0} lies on the Dirichlet boundary")]
    BoundaryNode(usize),

    #[error("node {node}: {reason}")]
    IncompleteStencil { node: usize, reason: String },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("Dirichlet mismatch {mismatch:e} at node {node}")]
    DirichletMismatch { node: usize, mismatch: f64 },

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("linear solve failed: {0}")]
    SingularLinearSystem(String),

    #[error("Newton iteration did not converge: {reason}")]
    NonConvergence {
        reason: String,
        best: Box<(GridFunction, SolveReport)>,
    },

    #[error("comparison ordering violated: {label} by {violation:e} at node {node}")]
    OrderingViolation {
        label: String,
        violation: f64,
        node: usize,
    },

    #[error("height bound violated for k = {k}: sup |u| = {sup_u} > {bound}")]
    HeightBoundViolation { k: u32, sup_u: f64, bound: f64 },

    #[error("boundary differences s_{m}(k) not decreasing over the last steps: {history:?}")]
    NonDecreasingDifferences { m: u32, history: Vec<f64> },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("certificate precondition failed: {0}")]
    Certificate(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, PmcError>;
