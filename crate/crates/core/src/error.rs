use thiserror::Error;

/// Errors surfaced by the solver toolkit.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("proximal step length must be positive, got {0}")]
    NonPositiveProxStep(f64),

    #[error("sampling radius must be positive, got {0}")]
    NonPositiveRadius(f64),

    #[error("no deterministic fully-linear constant for estimator `{0}`")]
    UnsupportedEstimator(&'static str),

    #[error("inner iteration bound is unbounded for an exact solve (gamma = 1)")]
    ExactSolveUnbounded,

    #[error("line search failed to satisfy sufficient decrease after {trials} trials")]
    LineSearchFailed { trials: usize },

    #[error("{0}")]
    MissingTruth(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("reference optimizer did not converge: residual {residual:.3e} after {iters} iterations")]
    ReferenceDidNotConverge { residual: f64, iters: usize },
}
