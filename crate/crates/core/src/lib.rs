//! Killing graphs of prescribed mean curvature over Riemannian charts.
//!
//! The crate discretizes the prescribed mean curvature operator for graphs
//! along a Killing field with squared-norm potential `γ = 1/|Y|²`, solves
//! the Dirichlet problem with Newton's method, builds explicit barriers on
//! geodesic discs of hyperbolic space, runs the exhaustion by discs towards
//! the asymptotic problem and certifies solutions with independent checks.

pub mod barriers;
pub mod error;
pub mod exhaustion;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod operator;
pub mod solver;
pub mod verify;

pub use error::{PmcError, Result};
pub use geometry::{make_chart, Chart, ChartKind, ChartParams};
pub use mesh::{Grid, GridFunction};
pub use operator::PmcProblem;
pub use solver::{solve_dirichlet, NewtonConfig, SolveReport};
