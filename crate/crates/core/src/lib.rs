//! Derivative-free composite optimization.
//!
//! Minimizes `F(x) = f(x) + h(x)` where `f` is smooth but available only
//! through a counted function-value oracle, and `h` is a known convex
//! regularizer with a cheap proximal map. The main solver is a zeroth-order
//! proximal Newton loop ([`solver::zopn_solve`]) that estimates gradients by
//! finite differences or smoothing, maintains a positive-definite Hessian
//! approximation (BFGS or lazy finite differences), and solves each quadratic
//! subproblem inexactly with FISTA. Proximal-gradient baselines, a synthetic
//! problem zoo with a reference optimizer, and sample-size bounds for
//! quasi-Newton curvature conditions round out the toolkit.

pub mod baselines;
pub mod curvature;
pub mod error;
pub mod estimators;
pub mod hessian;
pub mod oracle;
pub mod problems;
pub mod report;
pub mod rng;
pub mod solver;
pub mod subsolver;

pub use error::CoreError;
pub use estimators::{GradEstimator, RadiusSchedule};
pub use hessian::{HessianState, HessianStrategy};
pub use oracle::{BlackBoxOracle, CompositeProblem, EvalCounter, Purpose, Regularizer};
pub use report::{IterationRecord, SolveReport, StopReason};
pub use solver::{ExternalStop, ZopnConfig};
pub use subsolver::{SubStatus, SubproblemResult, SubproblemSpec};
