//! The composite problem `F = f + h`: a counted black-box oracle for the
//! smooth part and value/prox operations for the supported regularizers.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::CoreError;

/// What an oracle call was spent on. Every evaluation carries a tag so the
/// per-run NF breakdown can be audited afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Gradient,
    Hessian,
    LineSearch,
    Misc,
}

impl Purpose {
    pub const ALL: [Purpose; 4] = [
        Purpose::Gradient,
        Purpose::Hessian,
        Purpose::LineSearch,
        Purpose::Misc,
    ];

    fn index(self) -> usize {
        match self {
            Purpose::Gradient => 0,
            Purpose::Hessian => 1,
            Purpose::LineSearch => 2,
            Purpose::Misc => 3,
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Purpose::Gradient => "gradient",
            Purpose::Hessian => "hessian",
            Purpose::LineSearch => "line_search",
            Purpose::Misc => "misc",
        };
        f.write_str(name)
    }
}

/// Function-evaluation counts, total and per purpose. Monotone: counts only
/// ever increase, and the total always equals the sum over purposes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounter {
    by_purpose: [u64; 4],
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.by_purpose.iter().sum()
    }

    pub fn count(&self, purpose: Purpose) -> u64 {
        self.by_purpose[purpose.index()]
    }

    fn record(&mut self, purpose: Purpose) {
        self.by_purpose[purpose.index()] += 1;
    }
}

type OracleFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// A deterministic black-box function of fixed dimension. The only access is
/// [`BlackBoxOracle::eval`], which charges exactly one call to the counter.
#[derive(Clone)]
pub struct BlackBoxOracle {
    f: Arc<OracleFn>,
    dim: usize,
    counter: EvalCounter,
}

impl BlackBoxOracle {
    pub fn new(dim: usize, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            dim,
            counter: EvalCounter::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    /// Evaluates `f(x)`, incrementing the counter under `purpose`.
    pub fn eval(&mut self, x: &DVector<f64>, purpose: Purpose) -> Result<f64, CoreError> {
        if x.len() != self.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.counter.record(purpose);
        Ok((self.f)(x))
    }
}

impl fmt::Debug for BlackBoxOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlackBoxOracle")
            .field("dim", &self.dim)
            .field("counter", &self.counter)
            .finish()
    }
}

/// The white-box convex regularizer `h`. All weights are nonnegative, so the
/// value is proper, closed, and convex for every kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    Zero,
    /// `weight * ||x||_1`
    L1 { weight: f64 },
    /// `(weight / 2) * ||x||^2`
    SqL2 { weight: f64 },
    /// `l1 * ||x||_1 + (l2 / 2) * ||x||^2`
    ElasticNet { l1: f64, l2: f64 },
}

fn soft_threshold(v: f64, tau: f64) -> f64 {
    v.signum() * (v.abs() - tau).max(0.0)
}

impl Regularizer {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { weight } => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::SqL2 { weight } => 0.5 * weight * x.norm_squared(),
            Regularizer::ElasticNet { l1, l2 } => {
                l1 * x.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * l2 * x.norm_squared()
            }
        }
    }

    /// The proximal map: the unique minimizer of `alpha*h(y) + ||y - v||^2/2`.
    pub fn prox(&self, v: &DVector<f64>, alpha: f64) -> Result<DVector<f64>, CoreError> {
        if alpha <= 0.0 {
            return Err(CoreError::NonPositiveProxStep(alpha));
        }
        Ok(match *self {
            Regularizer::Zero => v.clone(),
            Regularizer::L1 { weight } => v.map(|vi| soft_threshold(vi, alpha * weight)),
            Regularizer::SqL2 { weight } => v / (1.0 + alpha * weight),
            Regularizer::ElasticNet { l1, l2 } => {
                v.map(|vi| soft_threshold(vi, alpha * l1) / (1.0 + alpha * l2))
            }
        })
    }

    /// Distance from zero to `g + ∂h(x)`, the stationarity residual of the
    /// composite problem at `x` given the smooth gradient `g` there.
    pub fn subgradient_distance(&self, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let dist_l1 = |weight: f64, smooth: &DVector<f64>| -> f64 {
            let mut sq = 0.0;
            for i in 0..x.len() {
                let gi = smooth[i];
                let r = if x[i] > 0.0 {
                    gi + weight
                } else if x[i] < 0.0 {
                    gi - weight
                } else {
                    (gi.abs() - weight).max(0.0)
                };
                sq += r * r;
            }
            sq.sqrt()
        };
        match *self {
            Regularizer::Zero => g.norm(),
            Regularizer::L1 { weight } => dist_l1(weight, g),
            Regularizer::SqL2 { weight } => (g + weight * x).norm(),
            Regularizer::ElasticNet { l1, l2 } => {
                let smooth = g + l2 * x;
                dist_l1(l1, &smooth)
            }
        }
    }
}

/// Known Lipschitz/convexity constants of the smooth part, when available.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProblemConstants {
    /// Lipschitz constant of the gradient of `f`.
    pub lipschitz_grad: Option<f64>,
    /// Lipschitz constant of the Hessian of `f`.
    pub lipschitz_hess: Option<f64>,
    /// Strong convexity modulus of `f`, when positive.
    pub strong_convexity: Option<f64>,
}

type GradFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type HessVecFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Analytic ground truth for synthetic problems. Solvers never read this;
/// it exists for reference optimizers, diagnostics, and tests.
#[derive(Clone)]
pub struct Truth {
    pub grad: Arc<GradFn>,
    /// Hessian-vector product `(x, v) -> ∇²f(x) v`.
    pub hess_vec: Option<Arc<HessVecFn>>,
    pub x_star: Option<DVector<f64>>,
    pub f_star: Option<f64>,
}

impl Truth {
    /// Materializes the full Hessian at `x` by applying `hess_vec` to the
    /// basis vectors. Intended for small test problems.
    pub fn dense_hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let hv = self.hess_vec.as_ref()?;
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            h.set_column(j, &hv(x, &e));
            e[j] = 0.0;
        }
        Some(h)
    }
}

impl fmt::Debug for Truth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Truth")
            .field("has_hess_vec", &self.hess_vec.is_some())
            .field("x_star", &self.x_star.as_ref().map(|x| x.len()))
            .field("f_star", &self.f_star)
            .finish()
    }
}

/// The composite problem `F = f + h`. Solvers may read only the oracle, the
/// regularizer, and the constants; `truth` is reserved for reference
/// computations and diagnostics.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    pub oracle: BlackBoxOracle,
    pub reg: Regularizer,
    pub constants: ProblemConstants,
    pub truth: Option<Truth>,
}

impl CompositeProblem {
    pub fn new(oracle: BlackBoxOracle, reg: Regularizer) -> Self {
        Self {
            oracle,
            reg,
            constants: ProblemConstants::default(),
            truth: None,
        }
    }

    pub fn dimension(&self) -> usize {
        self.oracle.dimension()
    }

    /// `F(x) = f(x) + h(x)`; exactly one oracle call.
    pub fn value(&mut self, x: &DVector<f64>, purpose: Purpose) -> Result<f64, CoreError> {
        Ok(self.oracle.eval(x, purpose)? + self.reg.value(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn eval_counts_and_values() {
        let mut oracle = BlackBoxOracle::new(2, |x| x.norm_squared());
        assert_eq!(oracle.counter().total(), 0);
        let v = oracle.eval(&vec2(0.0, 0.0), Purpose::Misc).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(oracle.counter().total(), 1);
        assert_eq!(oracle.eval(&vec2(3.0, 4.0), Purpose::Misc).unwrap(), 25.0);

        // Determinism plus the counting contract: same point, same value.
        let a = oracle.eval(&vec2(1.5, -2.0), Purpose::Gradient).unwrap();
        let b = oracle.eval(&vec2(1.5, -2.0), Purpose::Gradient).unwrap();
        assert_eq!(a, b);
        assert_eq!(oracle.counter().total(), 4);
        assert_eq!(oracle.counter().count(Purpose::Gradient), 2);
    }

    #[test]
    fn eval_rejects_dimension_mismatch() {
        let mut oracle = BlackBoxOracle::new(3, |x| x.sum());
        let err = oracle.eval(&vec2(1.0, 2.0), Purpose::Misc).unwrap_err();
        assert!(matches!(
            err,
            CoreError::DimensionMismatch {
                expected: 3,
                got: 2
            }
        ));
        // A failed call does not count.
        assert_eq!(oracle.counter().total(), 0);
    }

    #[test]
    fn counter_total_matches_purpose_sum() {
        let mut oracle = BlackBoxOracle::new(1, |x| x[0]);
        let x = DVector::from_vec(vec![1.0]);
        for purpose in [Purpose::Gradient, Purpose::Hessian, Purpose::LineSearch] {
            for _ in 0..3 {
                oracle.eval(&x, purpose).unwrap();
            }
        }
        let c = oracle.counter();
        let sum: u64 = Purpose::ALL.iter().map(|&p| c.count(p)).sum();
        assert_eq!(c.total(), sum);
        assert_eq!(c.total(), 9);
    }

    #[test]
    fn regularizer_values() {
        assert_eq!(
            Regularizer::L1 { weight: 0.5 }.value(&vec2(1.0, -2.0)),
            1.5
        );
        assert_eq!(
            Regularizer::SqL2 { weight: 2.0 }.value(&DVector::from_vec(vec![3.0])),
            9.0
        );
        assert_eq!(
            Regularizer::ElasticNet { l1: 0.5, l2: 1.0 }.value(&DVector::from_vec(vec![2.0])),
            3.0
        );
        assert_eq!(Regularizer::Zero.value(&vec2(7.0, -7.0)), 0.0);
    }

    #[test]
    fn prox_closed_forms() {
        let l1 = Regularizer::L1 { weight: 0.5 };
        let p = l1.prox(&vec2(1.2, -0.3), 1.0).unwrap();
        assert_relative_eq!(p[0], 0.7, max_relative = 1e-15);
        assert_eq!(p[1], 0.0);

        let zero = Regularizer::Zero;
        assert_eq!(zero.prox(&vec2(5.0, -5.0), 3.0).unwrap(), vec2(5.0, -5.0));

        assert!(matches!(
            l1.prox(&vec2(1.0, 1.0), 0.0),
            Err(CoreError::NonPositiveProxStep(_))
        ));
    }

    /// Brute-force 1-D oracle for the prox of the elastic net: grid-minimize
    /// `alpha*h(y) + (y - v)^2 / 2` and compare against the closed form.
    #[test]
    fn elastic_net_prox_matches_grid_search() {
        let reg = Regularizer::ElasticNet { l1: 0.5, l2: 1.0 };
        let v = DVector::from_vec(vec![1.5]);
        let alpha = 1.0;
        let objective = |y: f64| {
            alpha * (0.5 * y.abs() + 0.5 * y * y) + 0.5 * (y - 1.5) * (y - 1.5)
        };
        let mut best = (f64::INFINITY, 0.0);
        let mut y = -2.0;
        while y <= 2.0 {
            let val = objective(y);
            if val < best.0 {
                best = (val, y);
            }
            y += 1e-6;
        }
        let p = reg.prox(&v, alpha).unwrap();
        assert!((p[0] - best.1).abs() < 1e-5, "closed form {} vs grid {}", p[0], best.1);
        assert_relative_eq!(p[0], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn composite_value_single_call() {
        let oracle = BlackBoxOracle::new(2, |x| 0.5 * x.norm_squared());
        let mut p = CompositeProblem::new(oracle, Regularizer::L1 { weight: 1.0 });
        let v = p.value(&vec2(1.0, 0.0), Purpose::Misc).unwrap();
        assert_eq!(v, 1.5);
        assert_eq!(p.oracle.counter().total(), 1);

        let oracle = BlackBoxOracle::new(2, |x| x[0] * x[1] + 2.0);
        let mut p = CompositeProblem::new(oracle, Regularizer::Zero);
        let x = vec2(2.0, -0.5);
        let fv = p.value(&x, Purpose::Misc).unwrap();
        assert_eq!(fv, p.oracle.eval(&x, Purpose::Misc).unwrap());
    }

    /// Subgradient optimality of the prox: `0 ∈ alpha*∂h(p) + (p - v)`.
    fn prox_optimality_holds(reg: &Regularizer, v: &DVector<f64>, alpha: f64) -> bool {
        let p = reg.prox(v, alpha).unwrap();
        match *reg {
            Regularizer::Zero => (&p - v).norm() <= 1e-12,
            Regularizer::L1 { weight } => (0..v.len()).all(|i| {
                let slack = v[i] - p[i];
                if p[i] != 0.0 {
                    (slack - alpha * weight * p[i].signum()).abs() <= 1e-12
                } else {
                    slack.abs() <= alpha * weight + 1e-12
                }
            }),
            Regularizer::SqL2 { weight } => {
                ((1.0 + alpha * weight) * &p - v).norm() <= 1e-12 * (1.0 + v.norm())
            }
            Regularizer::ElasticNet { l1, l2 } => (0..v.len()).all(|i| {
                let slack = v[i] - (1.0 + alpha * l2) * p[i];
                if p[i] != 0.0 {
                    (slack - alpha * l1 * p[i].signum()).abs() <= 1e-12
                } else {
                    slack.abs() <= alpha * l1 + 1e-12
                }
            }),
        }
    }

    proptest! {
        #[test]
        fn prox_optimality(
            vals in proptest::collection::vec(-10.0f64..10.0, 1..6),
            alpha in 0.01f64..10.0,
            kind in 0usize..4,
        ) {
            let v = DVector::from_vec(vals);
            let reg = match kind {
                0 => Regularizer::Zero,
                1 => Regularizer::L1 { weight: 0.7 },
                2 => Regularizer::SqL2 { weight: 1.3 },
                _ => Regularizer::ElasticNet { l1: 0.4, l2: 0.9 },
            };
            prop_assert!(prox_optimality_holds(&reg, &v, alpha));
        }
    }

    #[test]
    fn prox_is_nonexpansive() {
        use rand::Rng;
        let mut rng = crate::rng::stream(7, 0, 0);
        let regs = [
            Regularizer::Zero,
            Regularizer::L1 { weight: 0.8 },
            Regularizer::SqL2 { weight: 2.0 },
            Regularizer::ElasticNet { l1: 0.3, l2: 1.5 },
        ];
        for _ in 0..1000 {
            let n = 4;
            let u = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let v = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let alpha = rng.random_range(0.01..4.0);
            for reg in &regs {
                let pu = reg.prox(&u, alpha).unwrap();
                let pv = reg.prox(&v, alpha).unwrap();
                assert!((pu - pv).norm() <= (&u - &v).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn subgradient_distance_l1_cases() {
        let reg = Regularizer::L1 { weight: 1.0 };
        // Interior of the subdifferential at zero: distance 0.
        let x = vec2(0.0, 0.0);
        let g = vec2(0.5, -0.5);
        assert_eq!(reg.subgradient_distance(&x, &g), 0.0);
        // Active coordinate: residual g + weight*sign(x).
        let x = vec2(2.0, 0.0);
        let g = vec2(-1.0, 3.0);
        assert_relative_eq!(reg.subgradient_distance(&x, &g), 2.0, max_relative = 1e-12);
    }
}
