//! Zeroth-order proximal gradient baselines with constant steps, plus the
//! power-of-two step-size tuning grid.

use nalgebra::DVector;

use crate::error::CoreError;
use crate::estimators::GradEstimator;
use crate::oracle::{CompositeProblem, Purpose};
use crate::report::{IterationRecord, SolveReport, StopReason};
use crate::rng::{self, domain, stream};
use crate::solver::ExternalStop;

/// Configuration of a proximal-gradient baseline run.
#[derive(Debug, Clone)]
pub struct ProxGdConfig {
    pub estimator: GradEstimator,
    /// Constant step size.
    pub step: f64,
    /// Fixed sampling radius (the outer radius for double Gaussian
    /// smoothing, whose inner radius lives on the estimator).
    pub radius: f64,
    pub max_nf: u64,
    pub seed: u64,
    /// Seeds averaged by the tuner for stochastic estimators.
    pub runs: usize,
    pub stop: Option<ExternalStop>,
}

impl ProxGdConfig {
    pub fn new(estimator: GradEstimator, step: f64, radius: f64, max_nf: u64) -> Self {
        Self {
            estimator,
            step,
            radius,
            max_nf,
            seed: 0,
            runs: 10,
            stop: None,
        }
    }

    fn validate(&self) -> Result<(), CoreError> {
        if self.step <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.step
            )));
        }
        if self.radius <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "sampling radius must be positive, got {}",
                self.radius
            )));
        }
        if self.runs == 0 {
            return Err(CoreError::InvalidConfig(
                "runs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Iterates `x <- prox(h, x - step * g, step)` with a zeroth-order gradient
/// estimate at fixed radius. Stops on the oracle budget or an externally
/// supplied objective-gap target, checked every iteration.
pub fn proxgd_solve(
    problem: &mut CompositeProblem,
    x0: DVector<f64>,
    cfg: &ProxGdConfig,
) -> Result<SolveReport, CoreError> {
    cfg.validate()?;
    let n = problem.dimension();
    if x0.len() != n {
        return Err(CoreError::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }

    let mut x = x0;
    let mut work = DVector::zeros(n);
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut f_initial = f64::NAN;
    let stop_reason;

    let mut k = 0usize;
    loop {
        // One cached base evaluation per iteration: reused by the estimator
        // and by the trace/stop bookkeeping.
        let smooth = problem.oracle.eval(&x, Purpose::Misc)?;
        let composite = smooth + problem.reg.value(&x);
        if k == 0 {
            f_initial = composite;
        } else {
            trace[k - 1].composite_value = composite;
        }

        if let Some(stop) = &cfg.stop {
            if stop.triggered(composite, &x) {
                stop_reason = StopReason::TargetReached;
                break;
            }
        }
        if problem.oracle.counter().total() > cfg.max_nf {
            stop_reason = StopReason::BudgetExhausted;
            break;
        }

        let mut rng = stream(cfg.seed, domain::ITERATION, k as u64);
        let (grad, _) =
            cfg.estimator
                .estimate(&mut problem.oracle, &x, cfg.radius, Some(smooth), &mut rng)?;
        work.copy_from(&x);
        work.axpy(-cfg.step, &grad, 1.0);
        let next = problem.reg.prox(&work, cfg.step)?;
        let step_norm = (0..next.len())
            .map(|i| {
                let d = next[i] - x[i];
                d * d
            })
            .sum::<f64>()
            .sqrt();
        x = next;

        trace.push(IterationRecord {
            k,
            nf_total: problem.oracle.counter().total(),
            composite_value: f64::NAN, // filled at the next base evaluation
            step_norm,
            step_size: cfg.step,
            radius: cfg.radius,
            inner_iters: 0,
            inner_status: None,
            unit_step: false,
            ls_trials: 0,
            model_decrease: None,
            dm_ratio: None,
        });
        k += 1;
    }

    let f_final = problem.value(&x, Purpose::Misc)?;
    Ok(SolveReport {
        trace,
        details: Vec::new(),
        f_initial,
        x_final: x,
        f_final,
        stop_reason,
        counter: *problem.oracle.counter(),
        terminal: None,
        radius_rule_violations: 0,
    })
}

/// The tuning grid `2^j, j = -15..=10` from the experimental protocol.
pub fn step_grid() -> Vec<f64> {
    (-15..=10).map(|j| 2.0_f64.powi(j)).collect()
}

/// Tunes the constant step over the power-of-two grid: one full-budget solve
/// per grid point (averaged over `cfg.runs` derived seeds for stochastic
/// estimators), returning the step with the lowest mean final objective.
/// Ties break toward the larger step. The table maps each step to its mean
/// final objective.
pub fn tune_step(
    problem: &CompositeProblem,
    cfg: &ProxGdConfig,
) -> Result<(f64, Vec<(f64, f64)>), CoreError> {
    cfg.validate()?;
    let runs = if cfg.estimator.is_stochastic() {
        cfg.runs
    } else {
        1
    };
    let n = problem.dimension();
    let mut best: Option<(f64, f64)> = None;
    let mut table = Vec::new();
    // Largest step first so that strict improvement keeps the larger step
    // on ties.
    for &step in step_grid().iter().rev() {
        let mut sum = 0.0;
        for run in 0..runs {
            let mut instance = problem.clone();
            let mut run_cfg = cfg.clone();
            run_cfg.step = step;
            run_cfg.seed = rng::mix(cfg.seed, run as u64);
            let report = proxgd_solve(&mut instance, DVector::zeros(n), &run_cfg)?;
            sum += report.f_final;
        }
        let mean = sum / runs as f64;
        let score = if mean.is_nan() { f64::INFINITY } else { mean };
        table.push((step, score));
        if best.is_none_or(|(_, b)| score < b) {
            best = Some((step, score));
        }
    }
    table.reverse(); // ascending steps for readability
    let (best_step, _) = best.expect("grid is nonempty");
    Ok((best_step, table))
}
