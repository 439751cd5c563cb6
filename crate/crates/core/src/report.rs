//! Per-iteration trace records and the final solve report, shared by the
//! proximal Newton solver and the proximal-gradient baselines.

use nalgebra::{DMatrix, DVector};

use crate::oracle::EvalCounter;
use crate::subsolver::SubStatus;

/// One completed outer iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    /// Cumulative oracle calls at the end of this iteration.
    pub nf_total: u64,
    /// Composite value F at the new iterate produced by this iteration.
    pub composite_value: f64,
    pub step_norm: f64,
    /// Accepted line-search step size (the constant step for baselines).
    pub step_size: f64,
    /// Sampling radius used this iteration.
    pub radius: f64,
    pub inner_iters: usize,
    pub inner_status: Option<SubStatus>,
    /// Whether the first line-search trial (the full step) was accepted.
    pub unit_step: bool,
    pub ls_trials: usize,
    /// Model decrease `g'd + h(x+d) - h(x)`; absent for baselines.
    pub model_decrease: Option<f64>,
    /// Dennis-More ratio against the true Hessian at the reference optimum,
    /// recorded only when ground truth is available.
    pub dm_ratio: Option<f64>,
}

/// Verification data for one iteration: enough to independently recheck the
/// inexactness certificate and stationarity bounds after the run.
#[derive(Debug, Clone)]
pub struct IterationDetail {
    /// Iterate at the start of the iteration.
    pub iterate: DVector<f64>,
    /// Subproblem step d.
    pub step: DVector<f64>,
    /// Subgradient residual r of the accepted step.
    pub residual: DVector<f64>,
    /// `||r||_{H^{-1}}`, freshly recomputed by the outer loop.
    pub criterion_lhs: f64,
    /// `(1 - gamma) ||d||_H`, freshly recomputed by the outer loop.
    pub criterion_rhs: f64,
    /// `d' H d`.
    pub step_quad: f64,
    /// `||H_k||` for this iteration.
    pub hess_norm: f64,
    /// Dense copy of `H_k`, captured only on request (verification runs).
    pub hess_snapshot: Option<DMatrix<f64>>,
}

/// Why the solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The outer step fell to `||d|| <= step_tol`.
    StepTolerance,
    /// The subproblem exited on its small-step test.
    InnerSmallStep,
    /// The oracle budget was exhausted.
    BudgetExhausted,
    /// An externally supplied target (objective gap or iterate distance) was
    /// reached.
    TargetReached,
}

/// State at a terminal step-tolerance stop: the gradient and subproblem work
/// of the final half-iteration, which produced the returned point `x + d`
/// without a line search.
#[derive(Debug, Clone)]
pub struct TerminalRecord {
    pub k: usize,
    pub nf_total: u64,
    pub radius: f64,
    pub step_norm: f64,
    pub inner_iters: usize,
    pub inner_status: SubStatus,
}

/// Full output of one solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub trace: Vec<IterationRecord>,
    /// Verification details, aligned with `trace`. Baselines leave it empty.
    pub details: Vec<IterationDetail>,
    /// Composite value at the initial point.
    pub f_initial: f64,
    pub x_final: DVector<f64>,
    /// Composite value at `x_final`, recomputed at termination.
    pub f_final: f64,
    pub stop_reason: StopReason,
    /// Final oracle counter snapshot.
    pub counter: EvalCounter,
    pub terminal: Option<TerminalRecord>,
    /// Number of iterations where the decay diagnostic
    /// `radius_k <= ||d_k||^3` failed (relevant to BFGS with decaying radii).
    pub radius_rule_violations: usize,
}

impl SolveReport {
    /// Iterate-level view: `(k, nf to reach x_k, F(x_k))` for k = 0..,
    /// including the terminal point when the run ended mid-iteration.
    pub fn iterate_rows(&self) -> Vec<(usize, u64, f64)> {
        let mut rows = vec![(0, 0, self.f_initial)];
        for rec in &self.trace {
            rows.push((rec.k + 1, rec.nf_total, rec.composite_value));
        }
        if let Some(term) = &self.terminal {
            rows.push((term.k + 1, term.nf_total, self.f_final));
        }
        rows
    }
}
