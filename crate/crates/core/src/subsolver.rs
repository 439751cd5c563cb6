//! Inexact FISTA solver for the proximal Newton subproblem
//! `min_d g'd + d'Hd/2 + h(x + d)`.
//!
//! The residual of an inner iterate is available in closed form from the
//! momentum step, so no subdifferential of `h` is ever evaluated. Iteration
//! stops as soon as the residual passes the inexactness test
//! `||r||_{H^{-1}} <= (1 - gamma) ||d||_H`, the step drops below the outer
//! tolerance, or the iteration cap is hit.

use nalgebra::DVector;

use crate::error::CoreError;
use crate::hessian::HessianState;
use crate::oracle::Regularizer;

/// Inputs of one subproblem solve.
pub struct SubproblemSpec<'a> {
    pub base_point: &'a DVector<f64>,
    pub grad: &'a DVector<f64>,
    pub hess: &'a HessianState,
    pub reg: &'a Regularizer,
    /// Inexactness parameter in (0, 1]; 1 demands an exact solve.
    pub gamma: f64,
    /// Outer step tolerance: stop early once `||d|| <= step_tol`. Zero
    /// disables the test, so a decaying-radius run can sit at an exact model
    /// fixed point until the radius moves again.
    pub step_tol: f64,
    pub max_inner: usize,
}

/// Why the inner loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubStatus {
    CriterionMet,
    SmallStep,
    InnerCapHit,
}

/// Result of one subproblem solve. On `InnerCapHit` the returned step is the
/// best iterate seen (lowest model value), flagged for the outer loop.
#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub step: DVector<f64>,
    pub residual: DVector<f64>,
    pub inner_iters: usize,
    pub status: SubStatus,
}

/// Worst-case FISTA iteration count to reach the inexactness criterion from
/// distance `dist_to_opt`, given eigenvalue bounds on `H`.
pub fn inner_iteration_bound(
    kappa_hi: f64,
    kappa_lo: f64,
    gamma: f64,
    step_tol: f64,
    dist_to_opt: f64,
) -> Result<u64, CoreError> {
    if gamma >= 1.0 {
        return Err(CoreError::ExactSolveUnbounded);
    }
    let raw =
        16.0 * kappa_hi.powf(1.5) * dist_to_opt / ((1.0 - gamma) * kappa_lo.powf(1.5) * step_tol);
    // Shave a relative epsilon so roundoff cannot push an exact integer
    // value across its ceiling.
    let bounded = (raw * (1.0 - 1e-12)).ceil();
    if bounded >= u64::MAX as f64 {
        return Ok(u64::MAX);
    }
    Ok(bounded as u64 + 1)
}

/// Runs FISTA on the subproblem. Consumes zero oracle calls: the quadratic
/// model is explicit.
pub fn solve_subproblem(spec: &SubproblemSpec<'_>) -> SubproblemResult {
    solve_subproblem_observed(spec, |_, _, _| {})
}

/// Same as [`solve_subproblem`], reporting `(l, y_l, psi_l)` for each inner
/// iterate. Used by tests to check the FISTA gap decay.
pub(crate) fn solve_subproblem_observed(
    spec: &SubproblemSpec<'_>,
    mut observe: impl FnMut(usize, &DVector<f64>, f64),
) -> SubproblemResult {
    let x = spec.base_point;
    let n = x.len();
    let hess_norm = spec.hess.spectral_norm();
    debug_assert!(hess_norm > 0.0);
    let alpha = 1.0 / hess_norm;

    let mut y_prev = x.clone();
    let mut z = x.clone();
    let mut theta_prev: f64 = 1.0;

    let mut best: Option<(f64, DVector<f64>, DVector<f64>, usize)> = None;

    let mut hz = DVector::zeros(n);
    for l in 1..=spec.max_inner {
        let theta = 0.5 * (1.0 + (1.0 + 4.0 * theta_prev * theta_prev).sqrt());

        // hz = H (z - x)
        hz.gemv(1.0, spec.hess.matrix(), &(&z - x), 0.0);
        let target = &z - alpha * (spec.grad + &hz);
        let y = spec
            .reg
            .prox(&target, alpha)
            .expect("prox step length 1/||H|| is positive");

        // Residual of the optimality system at y, from the momentum point:
        // r = H (y - z) + (z - y) / alpha.
        let w = &y - &z;
        let mut residual = DVector::zeros(n);
        residual.gemv(1.0, spec.hess.matrix(), &w, 0.0);
        residual.axpy(-hess_norm, &w, 1.0);

        let d = &y - x;
        // H d = H(z - x) + H(y - z), both already at hand.
        let mut hd = hz.clone();
        hd.gemv(1.0, spec.hess.matrix(), &w, 1.0);
        let dhd = d.dot(&hd).max(0.0);

        let model_value = spec.grad.dot(&d) + 0.5 * dhd + spec.reg.value(&y);
        observe(l, &y, model_value);

        let lhs = spec.hess.norm_h_inv(&residual);
        let rhs = (1.0 - spec.gamma) * dhd.sqrt();
        if lhs <= rhs {
            return SubproblemResult {
                step: d,
                residual,
                inner_iters: l,
                status: SubStatus::CriterionMet,
            };
        }
        if spec.step_tol > 0.0 && d.norm() <= spec.step_tol {
            return SubproblemResult {
                step: d,
                residual,
                inner_iters: l,
                status: SubStatus::SmallStep,
            };
        }

        if best.as_ref().is_none_or(|(v, ..)| model_value < *v) {
            best = Some((model_value, d, residual, l));
        }

        let momentum = (theta_prev - 1.0) / theta;
        z = &y + momentum * (&y - &y_prev);
        y_prev = y;
        theta_prev = theta;
    }

    let (_, step, residual, _) = best.expect("max_inner >= 1 guarantees at least one iterate");
    SubproblemResult {
        step,
        residual,
        inner_iters: spec.max_inner,
        status: SubStatus::InnerCapHit,
    }
}

/// Closed-form minimizer of the subproblem when `H` is diagonal and `h` is
/// an l1 penalty: coordinatewise soft thresholding. Test oracle.
pub fn diagonal_l1_solution(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    diag: &DVector<f64>,
    weight: f64,
) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let v = x[i] - grad[i] / diag[i];
        let tau = weight / diag[i];
        v.signum() * (v.abs() - tau).max(0.0) - x[i]
    })
}
