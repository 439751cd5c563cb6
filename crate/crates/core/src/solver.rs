//! The outer zeroth-order proximal Newton loop: estimate a gradient, update
//! the Hessian approximation, solve the subproblem inexactly, backtrack, and
//! step — with full per-iteration diagnostics.

use nalgebra::DVector;

use crate::error::CoreError;
use crate::estimators::{GradEstimator, RadiusSchedule};
use crate::hessian::{
    ensure_spd, lazy_hessian, HessianState, HessianStrategy, DEFAULT_KAPPA_HI, DEFAULT_KAPPA_LO,
};
use crate::oracle::{CompositeProblem, Purpose};
use crate::report::{IterationDetail, IterationRecord, SolveReport, StopReason, TerminalRecord};
use crate::rng::{domain, stream};
use crate::subsolver::{solve_subproblem, SubStatus, SubproblemSpec};

/// Externally supplied stopping targets. The solver itself never reads
/// problem truth; a harness that knows the reference optimum passes the
/// targets in explicitly.
#[derive(Debug, Clone, Default)]
pub struct ExternalStop {
    /// Stop once `F(x) - f_star < gap_tol`.
    pub f_star: Option<f64>,
    pub gap_tol: f64,
    /// Stop once `||x - x_star|| < x_tol`.
    pub x_star: Option<DVector<f64>>,
    pub x_tol: f64,
}

impl ExternalStop {
    pub fn gap(f_star: f64, gap_tol: f64) -> Self {
        Self {
            f_star: Some(f_star),
            gap_tol,
            ..Self::default()
        }
    }

    pub fn iterate_distance(x_star: DVector<f64>, x_tol: f64) -> Self {
        Self {
            x_star: Some(x_star),
            x_tol,
            ..Self::default()
        }
    }

    pub(crate) fn triggered(&self, composite_value: f64, x: &DVector<f64>) -> bool {
        if let Some(f_star) = self.f_star {
            if composite_value - f_star < self.gap_tol {
                return true;
            }
        }
        if let Some(x_star) = &self.x_star {
            if (x - x_star).norm() < self.x_tol {
                return true;
            }
        }
        false
    }
}

/// Configuration of the proximal Newton solver.
#[derive(Debug, Clone)]
pub struct ZopnConfig {
    /// Sufficient-decrease slope in (0, 1/2).
    pub c1: f64,
    /// Weight of the `n * c2 * radius^2` compensation term in the
    /// line-search test.
    pub c2: f64,
    /// Backtracking factor in (0, 1).
    pub backtrack: f64,
    /// Initial line-search step.
    pub initial_step: f64,
    /// Subproblem inexactness parameter in (0, 1].
    pub gamma: f64,
    /// Outer stopping tolerance on the step norm; 0 disables the test.
    pub step_tol: f64,
    /// Oracle budget: stop once the total call count exceeds it.
    pub max_nf: u64,
    pub max_inner: usize,
    pub schedule: RadiusSchedule,
    pub estimator: GradEstimator,
    pub hessian: HessianStrategy,
    pub seed: u64,
    pub stop: Option<ExternalStop>,
    /// Store a dense copy of each iteration's Hessian approximation in the
    /// report details, for independent re-verification in tests.
    pub capture_hessians: bool,
}

impl ZopnConfig {
    /// Paper-default parameters for dimension `n`: c1 = 1e-4, c2 = 1e-8,
    /// backtrack 0.5, unit initial step, gamma 0.9, inner cap 1000, and an
    /// oracle budget of `300 (n + 1)`.
    pub fn defaults(n: usize) -> Self {
        Self {
            c1: 1e-4,
            c2: 1e-8,
            backtrack: 0.5,
            initial_step: 1.0,
            gamma: 0.9,
            step_tol: 0.0,
            max_nf: 300 * (n as u64 + 1),
            max_inner: 1000,
            schedule: RadiusSchedule::Constant(5e-10),
            estimator: GradEstimator::Forward,
            hessian: HessianStrategy::bfgs(),
            seed: 0,
            stop: None,
            capture_hessians: false,
        }
    }

    fn validate(&self, n: usize) -> Result<(), CoreError> {
        let bad = |msg: String| Err(CoreError::InvalidConfig(msg));
        if !(self.c1 > 0.0 && self.c1 < 0.5) {
            return bad(format!("c1 must lie in (0, 1/2), got {}", self.c1));
        }
        if self.c2 <= 0.0 {
            return bad(format!("c2 must be positive, got {}", self.c2));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad(format!(
                "backtracking factor must lie in (0, 1), got {}",
                self.backtrack
            ));
        }
        if self.initial_step <= 0.0 {
            return bad("initial step must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.step_tol < 0.0 {
            return bad("step tolerance must be nonnegative".into());
        }
        if self.max_inner == 0 {
            return bad("inner iteration cap must be at least 1".into());
        }
        if let HessianStrategy::Lazy { period } = self.hessian {
            if period == 0 {
                return bad("lazy Hessian period must be at least 1".into());
            }
        }
        let _ = n;
        Ok(())
    }
}

/// Outcome of one backtracking line search.
#[derive(Debug, Clone, Copy)]
pub struct LineSearchOutcome {
    pub step_size: f64,
    pub trials: usize,
    /// Composite value at the accepted point.
    pub composite_next: f64,
    /// Smooth part at the accepted point, for reuse as the next cached f.
    pub smooth_next: f64,
}

const LINE_SEARCH_CAP: usize = 60;

/// Backtracking line search for the sufficient-decrease condition
/// `F(x + t d) - F(x) <= c1 t Phi + n c2 radius^2`.
/// Each trial costs exactly one oracle call.
pub fn line_search(
    problem: &mut CompositeProblem,
    x: &DVector<f64>,
    direction: &DVector<f64>,
    model_decrease: f64,
    composite_x: f64,
    radius: f64,
    cfg: &ZopnConfig,
) -> Result<LineSearchOutcome, CoreError> {
    let n = problem.dimension() as f64;
    let compensation = n * cfg.c2 * radius * radius;
    // Phi <= 0 holds whenever the subproblem certificate was met; clamping
    // guards the test against roundoff at vanishing steps.
    let slope = model_decrease.min(0.0);
    let mut t = cfg.initial_step;
    for i in 0..=LINE_SEARCH_CAP {
        let candidate = x + t * direction;
        let smooth = problem.oracle.eval(&candidate, Purpose::LineSearch)?;
        let composite = smooth + problem.reg.value(&candidate);
        if composite - composite_x <= cfg.c1 * t * slope + compensation {
            return Ok(LineSearchOutcome {
                step_size: t,
                trials: i + 1,
                composite_next: composite,
                smooth_next: smooth,
            });
        }
        t *= cfg.backtrack;
    }
    Err(CoreError::LineSearchFailed {
        trials: LINE_SEARCH_CAP + 1,
    })
}

/// Upper bound on the distance to stationarity implied by a step of norm
/// `step_norm` at sampling radius `radius`.
pub fn stationarity_bound(
    step_norm: f64,
    radius: f64,
    lipschitz_grad: f64,
    kappa_hi: f64,
    gamma: f64,
    kappa_eg: f64,
) -> f64 {
    (lipschitz_grad + (2.0 - gamma) * kappa_hi) * step_norm + kappa_eg * radius
}

/// Runs the zeroth-order proximal Newton loop from `x0`.
pub fn zopn_solve(
    problem: &mut CompositeProblem,
    x0: DVector<f64>,
    cfg: &ZopnConfig,
) -> Result<SolveReport, CoreError> {
    let n = problem.dimension();
    if x0.len() != n {
        return Err(CoreError::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    cfg.validate(n)?;

    // Dennis-More diagnostics need the true Hessian at the reference
    // optimum; purely observational, never steering the iterates.
    let dm_reference = problem.truth.as_ref().and_then(|t| {
        let hv = t.hess_vec.clone()?;
        let x_star = t.x_star.clone()?;
        Some((hv, x_star))
    });

    let mut x = x0;
    let smooth = problem.oracle.eval(&x, Purpose::Misc)?;
    let f_initial = smooth + problem.reg.value(&x);
    let mut composite_x = f_initial;
    let mut smooth_x = smooth;

    let mut hess = HessianState::identity(n);
    let mut grad_prev: Option<DVector<f64>> = None;
    let mut x_prev: Option<DVector<f64>> = None;

    let mut trace = Vec::new();
    let mut details = Vec::new();
    let mut terminal = None;
    let mut radius_rule_violations = 0usize;
    let stop_reason;

    let mut k = 0usize;
    loop {
        if problem.oracle.counter().total() > cfg.max_nf {
            stop_reason = StopReason::BudgetExhausted;
            break;
        }

        let radius = cfg.schedule.radius_at(k);
        let mut rng = stream(cfg.seed, domain::ITERATION, k as u64);
        let (grad, _) =
            cfg.estimator
                .estimate(&mut problem.oracle, &x, radius, Some(smooth_x), &mut rng)?;

        match cfg.hessian {
            HessianStrategy::Identity => {}
            HessianStrategy::Bfgs {
                curvature_threshold,
            } => {
                if let (Some(gp), Some(xp)) = (&grad_prev, &x_prev) {
                    let s = &x - xp;
                    if s.norm() > 0.0 {
                        let y = &grad - gp;
                        hess.bfgs_update(&s, &y, curvature_threshold);
                    }
                }
            }
            HessianStrategy::Lazy { period } => {
                if k % period == 0 {
                    let (raw, _) = lazy_hessian(&mut problem.oracle, &x, radius, smooth_x)?;
                    hess = ensure_spd(raw, DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
                }
            }
        }

        let sub = solve_subproblem(&SubproblemSpec {
            base_point: &x,
            grad: &grad,
            hess: &hess,
            reg: &problem.reg,
            gamma: cfg.gamma,
            step_tol: cfg.step_tol,
            max_inner: cfg.max_inner,
        });
        let step_norm = sub.step.norm();

        if matches!(cfg.hessian, HessianStrategy::Bfgs { .. }) && radius > step_norm.powi(3) {
            radius_rule_violations += 1;
        }

        if (cfg.step_tol > 0.0 && step_norm <= cfg.step_tol) || sub.status == SubStatus::SmallStep {
            // Algorithm output is x + d; no line search happens here.
            x += &sub.step;
            terminal = Some(TerminalRecord {
                k,
                nf_total: problem.oracle.counter().total(),
                radius,
                step_norm,
                inner_iters: sub.inner_iters,
                inner_status: sub.status,
            });
            stop_reason = if sub.status == SubStatus::SmallStep {
                StopReason::InnerSmallStep
            } else {
                StopReason::StepTolerance
            };
            break;
        }

        // Independent recheck material for the inexactness certificate.
        let criterion_lhs = hess.norm_h_inv(&sub.residual);
        let criterion_rhs = (1.0 - cfg.gamma) * hess.norm_h(&sub.step);
        let step_quad = sub.step.dot(&hess.apply(&sub.step));
        let model_decrease = grad.dot(&sub.step)
            + problem.reg.value(&(&x + &sub.step))
            - problem.reg.value(&x);

        let ls = line_search(
            problem,
            &x,
            &sub.step,
            model_decrease,
            composite_x,
            radius,
            cfg,
        )?;

        let dm_ratio = dm_reference.as_ref().map(|(hv, x_star)| {
            (hess.apply(&sub.step) - hv(x_star, &sub.step)).norm() / step_norm
        });

        details.push(IterationDetail {
            iterate: x.clone(),
            step: sub.step.clone(),
            residual: sub.residual.clone(),
            criterion_lhs,
            criterion_rhs,
            step_quad,
            hess_norm: hess.spectral_norm(),
            hess_snapshot: cfg.capture_hessians.then(|| hess.matrix().clone()),
        });

        x_prev = Some(x.clone());
        grad_prev = Some(grad);
        x += ls.step_size * &sub.step;
        composite_x = ls.composite_next;
        smooth_x = ls.smooth_next;

        trace.push(IterationRecord {
            k,
            nf_total: problem.oracle.counter().total(),
            composite_value: composite_x,
            step_norm,
            step_size: ls.step_size,
            radius,
            inner_iters: sub.inner_iters,
            inner_status: Some(sub.status),
            unit_step: ls.trials == 1,
            ls_trials: ls.trials,
            model_decrease: Some(model_decrease),
            dm_ratio,
        });

        if let Some(stop) = &cfg.stop {
            if stop.triggered(composite_x, &x) {
                stop_reason = StopReason::TargetReached;
                break;
            }
        }
        k += 1;
    }

    let f_final = problem.value(&x, Purpose::Misc)?;
    Ok(SolveReport {
        trace,
        details,
        f_initial,
        x_final: x,
        f_final,
        stop_reason,
        counter: *problem.oracle.counter(),
        terminal,
        radius_rule_violations,
    })
}
