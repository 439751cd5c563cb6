//! Zeroth-order gradient estimators and sampling-radius schedules.

use nalgebra::DVector;
use rand::Rng;

use crate::error::CoreError;
use crate::oracle::{BlackBoxOracle, Purpose};
use crate::rng::standard_normal_vector;

/// Gradient estimation scheme. The deterministic kinds (forward/central
/// difference) satisfy a fully-linear error bound; the smoothing kinds are
/// unbiased only in expectation and carry sample-count requirements instead.
#[derive(Debug, Clone, PartialEq)]
pub enum GradEstimator {
    Forward,
    Central,
    /// Average of `samples` Gaussian-direction two-point differences.
    Gaussian { samples: usize },
    /// Average of `samples` unit-sphere two-point differences, scaled by `n`.
    Spherical { samples: usize },
    /// Two-point double Gaussian smoothing; `inner_radius` is the radius of
    /// the first (shared) perturbation.
    DoubleGaussian { inner_radius: f64 },
}

fn unit_sphere_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = standard_normal_vector(n, rng);
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

impl GradEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            GradEstimator::Forward => "forward",
            GradEstimator::Central => "central",
            GradEstimator::Gaussian { .. } => "gaussian",
            GradEstimator::Spherical { .. } => "spherical",
            GradEstimator::DoubleGaussian { .. } => "double_gaussian",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, GradEstimator::Forward | GradEstimator::Central)
    }

    /// Estimates the gradient of the oracle at `x` with sampling radius
    /// `radius`. `cached_fx`, when present, must equal `f(x)` and saves the
    /// base-point evaluation for the kinds that need one. Returns the
    /// estimate together with the number of fresh oracle calls.
    pub fn estimate<R: Rng + ?Sized>(
        &self,
        oracle: &mut BlackBoxOracle,
        x: &DVector<f64>,
        radius: f64,
        cached_fx: Option<f64>,
        rng: &mut R,
    ) -> Result<(DVector<f64>, u64), CoreError> {
        if radius <= 0.0 {
            return Err(CoreError::NonPositiveRadius(radius));
        }
        let n = oracle.dimension();
        if x.len() != n {
            return Err(CoreError::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        let before = oracle.counter().total();
        let base = |oracle: &mut BlackBoxOracle| -> Result<f64, CoreError> {
            match cached_fx {
                Some(v) => Ok(v),
                None => oracle.eval(x, Purpose::Gradient),
            }
        };

        let g = match *self {
            GradEstimator::Forward => {
                let fx = base(oracle)?;
                let mut g = DVector::zeros(n);
                let mut probe = x.clone();
                for i in 0..n {
                    probe[i] = x[i] + radius;
                    g[i] = (oracle.eval(&probe, Purpose::Gradient)? - fx) / radius;
                    probe[i] = x[i];
                }
                g
            }
            GradEstimator::Central => {
                let mut g = DVector::zeros(n);
                let mut probe = x.clone();
                for i in 0..n {
                    probe[i] = x[i] + radius;
                    let fp = oracle.eval(&probe, Purpose::Gradient)?;
                    probe[i] = x[i] - radius;
                    let fm = oracle.eval(&probe, Purpose::Gradient)?;
                    probe[i] = x[i];
                    g[i] = (fp - fm) / (2.0 * radius);
                }
                g
            }
            GradEstimator::Gaussian { samples } => {
                let fx = base(oracle)?;
                let mut g = DVector::zeros(n);
                let mut probe = x.clone();
                for _ in 0..samples {
                    let u = standard_normal_vector(n, rng);
                    probe.copy_from(x);
                    probe.axpy(radius, &u, 1.0);
                    let fp = oracle.eval(&probe, Purpose::Gradient)?;
                    g.axpy((fp - fx) / radius, &u, 1.0);
                }
                g / samples as f64
            }
            GradEstimator::Spherical { samples } => {
                let fx = base(oracle)?;
                let mut g = DVector::zeros(n);
                let mut probe = x.clone();
                for _ in 0..samples {
                    let u = unit_sphere_vector(n, rng);
                    probe.copy_from(x);
                    probe.axpy(radius, &u, 1.0);
                    let fp = oracle.eval(&probe, Purpose::Gradient)?;
                    g.axpy((fp - fx) / radius, &u, 1.0);
                }
                g * (n as f64 / samples as f64)
            }
            GradEstimator::DoubleGaussian { inner_radius } => {
                let u1 = standard_normal_vector(n, rng);
                let u2 = standard_normal_vector(n, rng);
                let shifted = x + inner_radius * &u1;
                let fp = oracle.eval(&(&shifted + radius * &u2), Purpose::Gradient)?;
                let fs = oracle.eval(&shifted, Purpose::Gradient)?;
                ((fp - fs) / radius) * u2
            }
        };
        Ok((g, oracle.counter().total() - before))
    }

    /// The deterministic fully-linear constant: the gradient error is at most
    /// `kappa_eg * radius` for forward differences, and `kappa_eg * radius^2`
    /// for central differences (so callers should keep the radius at most 1
    /// to reuse it as a fully-linear constant). Smoothing estimators have no
    /// deterministic constant; see the curvature module for their
    /// probabilistic sample bounds.
    pub fn kappa_eg(
        &self,
        n: usize,
        lipschitz_grad: f64,
        lipschitz_hess: f64,
    ) -> Result<f64, CoreError> {
        match self {
            GradEstimator::Forward => Ok((n as f64).sqrt() * lipschitz_grad / 2.0),
            GradEstimator::Central => Ok((n as f64).sqrt() * lipschitz_hess / 6.0),
            other => Err(CoreError::UnsupportedEstimator(other.name())),
        }
    }
}

/// Sampling-radius schedule for the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub enum RadiusSchedule {
    Constant(f64),
    /// `initial / (k + 1)^exponent` with `exponent > 1/2`, square-summable.
    PowerDecay { initial: f64, exponent: f64 },
    /// `max(floor, min(cap, base^(2^k)))`: doubly exponential decay clipped
    /// to `[floor, cap]`; nonincreasing for `base` in (0, 1).
    DoublyExponential { base: f64, cap: f64, floor: f64 },
}

impl RadiusSchedule {
    pub fn radius_at(&self, k: usize) -> f64 {
        match *self {
            RadiusSchedule::Constant(r) => r,
            RadiusSchedule::PowerDecay { initial, exponent } => {
                initial / ((k + 1) as f64).powf(exponent)
            }
            RadiusSchedule::DoublyExponential { base, cap, floor } => {
                let exp = if k >= 1024 {
                    f64::INFINITY
                } else {
                    2.0_f64.powi(k as i32)
                };
                floor.max(cap.min(base.powf(exp)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn linear_oracle(a: DVector<f64>) -> BlackBoxOracle {
        BlackBoxOracle::new(a.len(), move |x| a.dot(x))
    }

    #[test]
    fn forward_on_constant_is_zero() {
        let mut oracle = BlackBoxOracle::new(3, |_| 4.2);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut rng = stream(0, domain::ITERATION, 0);
        let (g, evals) = GradEstimator::Forward
            .estimate(&mut oracle, &x, 0.1, None, &mut rng)
            .unwrap();
        assert_eq!(g, DVector::zeros(3));
        assert_eq!(evals, 4); // base point was not cached
    }

    #[test]
    fn forward_exact_on_affine() {
        let a = DVector::from_vec(vec![1.0, -2.0]);
        let mut oracle = linear_oracle(a.clone());
        let x = DVector::from_vec(vec![0.3, 0.7]);
        let fx = oracle.eval(&x, Purpose::Misc).unwrap();
        let mut rng = stream(0, domain::ITERATION, 0);
        for radius in [1e-6, 1e-3, 0.5] {
            let (g, evals) = GradEstimator::Forward
                .estimate(&mut oracle, &x, radius, Some(fx), &mut rng)
                .unwrap();
            // Exact up to the cancellation noise eps * |f| / radius.
            let tol = 1e-15 / radius + 1e-13;
            assert_relative_eq!(g[0], a[0], epsilon = tol);
            assert_relative_eq!(g[1], a[1], epsilon = tol);
            assert_eq!(evals, 2);
        }
    }

    #[test]
    fn forward_bias_on_quadratic_diagonal() {
        // f(x) = x' diag(2,4) x / 2, gradient at (1,1) is (2,4); the forward
        // difference adds (radius/2) * A_ii per coordinate.
        let mut oracle = BlackBoxOracle::new(2, |x| x[0] * x[0] + 2.0 * x[1] * x[1]);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let fx = oracle.eval(&x, Purpose::Misc).unwrap();
        let mut rng = stream(0, domain::ITERATION, 0);
        let (g, _) = GradEstimator::Forward
            .estimate(&mut oracle, &x, 0.1, Some(fx), &mut rng)
            .unwrap();
        assert_relative_eq!(g[0], 2.1, max_relative = 1e-10);
        assert_relative_eq!(g[1], 4.2, max_relative = 1e-10);
    }

    #[test]
    fn central_exact_on_quadratics() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 3.0, 1.0, 0.0, 1.0, 1.5]);
        let a2 = a.clone();
        let mut oracle = BlackBoxOracle::new(3, move |x| 0.5 * x.dot(&(&a2 * x)) + x.sum() + 3.0);
        let x = DVector::from_vec(vec![0.4, -1.0, 2.0]);
        let grad = &a * &x + DVector::from_element(3, 1.0);
        let mut rng = stream(0, domain::ITERATION, 0);
        let (g, evals) = GradEstimator::Central
            .estimate(&mut oracle, &x, 0.05, None, &mut rng)
            .unwrap();
        assert_eq!(evals, 6);
        assert!((g - grad).norm() < 1e-10);
    }

    #[test]
    fn gaussian_mean_near_truth_on_linear() {
        let a = DVector::from_vec(vec![1.0, -0.5, 2.0]);
        let mut oracle = linear_oracle(a.clone());
        let x = DVector::zeros(3);
        let fx = oracle.eval(&x, Purpose::Misc).unwrap();
        let mut rng = stream(11, domain::ITERATION, 0);
        let samples = 10_000;
        let (g, evals) = GradEstimator::Gaussian { samples }
            .estimate(&mut oracle, &x, 0.5, Some(fx), &mut rng)
            .unwrap();
        assert_eq!(evals, samples as u64);
        // Unbiased on linear f. A single Gaussian-smoothing sample has
        // E||g - a||^2 = (n + 1) ||a||^2, so the 3-sigma band for the mean
        // is 3 sqrt(n+1) ||a|| / sqrt(N).
        let n = a.len() as f64;
        let tol = 3.0 * (n + 1.0).sqrt() * a.norm() / (samples as f64).sqrt();
        assert!((g - a).norm() < tol);
    }

    #[test]
    fn double_gaussian_costs_two_evals() {
        let a = DVector::from_vec(vec![0.3, -0.2]);
        let mut oracle = linear_oracle(a);
        let x = DVector::zeros(2);
        let mut rng = stream(5, domain::ITERATION, 0);
        let (_, evals) = GradEstimator::DoubleGaussian { inner_radius: 1e-3 }
            .estimate(&mut oracle, &x, 1e-4, None, &mut rng)
            .unwrap();
        assert_eq!(evals, 2);
    }

    #[test]
    fn reported_evals_match_counter_delta() {
        let mut oracle = BlackBoxOracle::new(4, |x| x.norm_squared());
        let x = DVector::from_element(4, 0.5);
        let fx = oracle.eval(&x, Purpose::Misc).unwrap();
        let mut rng = stream(3, domain::ITERATION, 7);
        for est in [
            GradEstimator::Forward,
            GradEstimator::Central,
            GradEstimator::Gaussian { samples: 5 },
            GradEstimator::Spherical { samples: 5 },
            GradEstimator::DoubleGaussian { inner_radius: 0.01 },
        ] {
            let before = oracle.counter().total();
            let (_, evals) = est.estimate(&mut oracle, &x, 0.01, Some(fx), &mut rng).unwrap();
            assert_eq!(evals, oracle.counter().total() - before);
        }
    }

    #[test]
    fn rejects_nonpositive_radius() {
        let mut oracle = BlackBoxOracle::new(1, |x| x[0]);
        let x = DVector::from_vec(vec![0.0]);
        let mut rng = stream(0, domain::ITERATION, 0);
        assert!(matches!(
            GradEstimator::Forward.estimate(&mut oracle, &x, 0.0, None, &mut rng),
            Err(CoreError::NonPositiveRadius(_))
        ));
    }

    #[test]
    fn kappa_eg_values() {
        assert_eq!(GradEstimator::Forward.kappa_eg(4, 2.0, 0.0).unwrap(), 2.0);
        assert_eq!(GradEstimator::Central.kappa_eg(9, 0.0, 6.0).unwrap(), 3.0);
        assert!(matches!(
            GradEstimator::Gaussian { samples: 1 }.kappa_eg(4, 1.0, 1.0),
            Err(CoreError::UnsupportedEstimator("gaussian"))
        ));
    }

    #[test]
    fn fully_linear_bound_on_random_quadratics() {
        use rand::Rng;
        let mut rng = stream(21, domain::TRIAL, 0);
        let n = 6;
        for _ in 0..1000 {
            // Random SPD A = Q D Q' would be heavy; a random symmetric matrix
            // with bounded spectrum suffices since only ||diag(A)|| enters.
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let a = (&m + m.transpose()) * 0.5;
            let lf = a.clone().symmetric_eigen().eigenvalues.amax();
            let a2 = a.clone();
            let mut oracle = BlackBoxOracle::new(n, move |x| 0.5 * x.dot(&(&a2 * x)));
            let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let radius = rng.random_range(1e-6..1e-1);
            let fx = oracle.eval(&x, Purpose::Misc).unwrap();
            let (g, _) = GradEstimator::Forward
                .estimate(&mut oracle, &x, radius, Some(fx), &mut rng)
                .unwrap();
            let err = (&g - &a * &x).norm();
            let kappa = GradEstimator::Forward.kappa_eg(n, lf, 0.0).unwrap();
            assert!(
                err <= kappa * radius + 1e-9,
                "error {} exceeds bound {}",
                err,
                kappa * radius
            );
            // Exact error law: ||g - grad|| = (radius/2) ||diag(A)||.
            let diag_norm = a.diagonal().norm();
            assert_relative_eq!(err, 0.5 * radius * diag_norm, max_relative = 1e-6);
        }
    }

    #[test]
    fn smoothing_sample_means_converge() {
        // Single-sample estimators on linear f: the empirical mean over 1e5
        // seeded draws must sit within 5 empirical standard errors of the
        // true gradient.
        let a = DVector::from_vec(vec![2.0, -1.0, 0.5, 1.5]);
        let n = a.len();
        let draws = 100_000;
        for est in [
            GradEstimator::Gaussian { samples: 1 },
            GradEstimator::Spherical { samples: 1 },
        ] {
            let mut oracle = linear_oracle(a.clone());
            let x = DVector::zeros(n);
            let fx = oracle.eval(&x, Purpose::Misc).unwrap();
            let mut sum = DVector::zeros(n);
            let mut sum_sq = 0.0;
            let mut samples = Vec::with_capacity(draws);
            let mut rng = stream(99, domain::TRIAL, 1);
            for _ in 0..draws {
                let (g, _) = est.estimate(&mut oracle, &x, 0.1, Some(fx), &mut rng).unwrap();
                sum += &g;
                samples.push(g);
            }
            let mean = &sum / draws as f64;
            for g in &samples {
                sum_sq += (g - &mean).norm_squared();
            }
            let std = (sum_sq / draws as f64).sqrt();
            let err = (&mean - &a).norm();
            assert!(
                err <= 5.0 * std / (draws as f64).sqrt(),
                "{}: mean error {} vs band {}",
                est.name(),
                err,
                5.0 * std / (draws as f64).sqrt()
            );
        }
    }

    #[test]
    fn schedule_values() {
        assert_eq!(RadiusSchedule::Constant(5e-10).radius_at(7), 5e-10);
        let dexp = RadiusSchedule::DoublyExponential {
            base: 0.99,
            cap: 1e-3,
            floor: 1e-10,
        };
        assert_eq!(dexp.radius_at(0), 1e-3); // 0.99 clipped by the cap
        let pd = RadiusSchedule::PowerDecay {
            initial: 1.0,
            exponent: 1.0,
        };
        assert_eq!(pd.radius_at(3), 0.25);
    }

    #[test]
    fn doubly_exponential_leaves_cap_then_hits_floor() {
        let dexp = RadiusSchedule::DoublyExponential {
            base: 0.99,
            cap: 1e-3,
            floor: 1e-10,
        };
        for k in 0..=9 {
            assert_eq!(dexp.radius_at(k), 1e-3, "still capped at k={k}");
        }
        let r10 = dexp.radius_at(10);
        assert!(r10 < 1e-3 && r10 > 1e-10);
        assert_eq!(dexp.radius_at(40), 1e-10);
        assert_eq!(dexp.radius_at(2000), 1e-10); // saturated exponent path
        for k in 1..60 {
            assert!(dexp.radius_at(k) <= dexp.radius_at(k - 1));
        }
    }
}
