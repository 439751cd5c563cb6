//! Symmetric positive-definite Hessian approximations.
//!
//! [`HessianState`] owns the dense matrix together with a cached Cholesky
//! factor and spectral norm. BFGS updates maintain the factor by rank-one
//! update/downdate in O(n^2), falling back to a full refactorization when a
//! downdate loses positive definiteness or after enough accumulated updates.

use nalgebra::{DMatrix, DVector};

use crate::error::CoreError;
use crate::oracle::{BlackBoxOracle, Purpose};

/// Default eigenvalue floor for repaired matrices.
pub const DEFAULT_KAPPA_LO: f64 = 1e-8;
/// Default spectral-norm cap for repaired matrices.
pub const DEFAULT_KAPPA_HI: f64 = 1e8;
/// Default curvature safeguard: accept a BFGS pair only when
/// `y's >= threshold * ||s||^2`.
pub const DEFAULT_CURVATURE_THRESHOLD: f64 = 1e-9;

const REFACTOR_PERIOD: usize = 64;

/// How the outer solver maintains its Hessian approximation.
#[derive(Debug, Clone, PartialEq)]
pub enum HessianStrategy {
    Identity,
    Bfgs { curvature_threshold: f64 },
    /// Recompute a finite-difference Hessian every `period` iterations and
    /// reuse it in between.
    Lazy { period: usize },
}

impl HessianStrategy {
    pub fn bfgs() -> Self {
        HessianStrategy::Bfgs {
            curvature_threshold: DEFAULT_CURVATURE_THRESHOLD,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HessianStrategy::Identity => "identity",
            HessianStrategy::Bfgs { .. } => "bfgs",
            HessianStrategy::Lazy { .. } => "lazy",
        }
    }
}

fn deterministic_start(n: usize) -> DVector<f64> {
    // A fixed, slightly irregular start vector; avoids being orthogonal to
    // the top eigenvector for the matrices we meet in practice.
    let mut v = DVector::from_fn(n, |i, _| {
        1.0 + 0.25 * ((i.wrapping_mul(2654435761) % 97) as f64 / 97.0)
    });
    v /= v.norm();
    v
}

fn power_iteration(h: &DMatrix<f64>, warm: Option<&DVector<f64>>) -> (f64, DVector<f64>) {
    let n = h.nrows();
    if n == 0 {
        return (0.0, DVector::zeros(0));
    }
    let mut v = match warm {
        Some(w) if w.len() == n && w.norm() > 0.0 => w.normalize(),
        _ => deterministic_start(n),
    };
    let mut w = DVector::zeros(n);
    let mut estimate = 0.0;
    for _ in 0..200 {
        w.gemv(1.0, h, &v, 0.0);
        let norm = w.norm();
        if norm == 0.0 {
            return (0.0, v);
        }
        let next = norm;
        v.copy_from(&w);
        v /= norm;
        if (next - estimate).abs() <= 1e-8 * next.max(f64::MIN_POSITIVE) {
            return (next, v);
        }
        estimate = next;
    }
    // Stalled: fall back to the Frobenius norm, a valid upper bound. The
    // FISTA step size only needs an upper bound on ||H||.
    let frob = h.norm();
    (frob.max(estimate), v)
}

/// Spectral norm of a symmetric matrix by power iteration (relative
/// tolerance 1e-8, 200-iteration cap, Frobenius upper bound on stall).
pub fn spectral_norm(h: &DMatrix<f64>) -> f64 {
    power_iteration(h, None).0
}

fn cholesky_factor(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    nalgebra::linalg::Cholesky::new(h.clone()).map(|c| c.unpack())
}

/// Exact test for `lambda_min(h) >= floor` up to a relative slack:
/// a Cholesky factorization of `h - floor (1 - 1e-6) I` succeeds exactly
/// when the shifted matrix is positive definite.
fn clears_eigenvalue_floor(h: &DMatrix<f64>, floor: f64) -> bool {
    let mut shifted = h.clone();
    let margin = floor * (1.0 - 1e-6);
    for i in 0..h.nrows() {
        shifted[(i, i)] -= margin;
    }
    nalgebra::linalg::Cholesky::new(shifted).is_some()
}

/// In-place rank-one update of a lower Cholesky factor: L L' + v v'.
fn chol_rank_one_update(l: &mut DMatrix<f64>, v: &DVector<f64>) {
    let n = l.nrows();
    let mut w = v.clone();
    for k in 0..n {
        let lkk = l[(k, k)];
        let wk = w[k];
        let r = lkk.hypot(wk);
        let c = r / lkk;
        let s = wk / lkk;
        l[(k, k)] = r;
        for i in k + 1..n {
            l[(i, k)] = (l[(i, k)] + s * w[i]) / c;
            w[i] = c * w[i] - s * l[(i, k)];
        }
    }
}

/// In-place rank-one downdate of a lower Cholesky factor: L L' - v v'.
/// Returns false (leaving the factor in an unusable state) when the result
/// would not be positive definite.
fn chol_rank_one_downdate(l: &mut DMatrix<f64>, v: &DVector<f64>) -> bool {
    let n = l.nrows();
    let mut w = v.clone();
    for k in 0..n {
        let lkk = l[(k, k)];
        let wk = w[k];
        let r_sq = lkk * lkk - wk * wk;
        if r_sq <= lkk * lkk * 1e-14 {
            return false;
        }
        let r = r_sq.sqrt();
        let c = r / lkk;
        let s = wk / lkk;
        l[(k, k)] = r;
        for i in k + 1..n {
            l[(i, k)] = (l[(i, k)] - s * w[i]) / c;
            w[i] = c * w[i] - s * l[(i, k)];
        }
    }
    true
}

/// A symmetric positive-definite approximation with cached factorization and
/// spectral norm.
#[derive(Debug, Clone)]
pub struct HessianState {
    h: DMatrix<f64>,
    l: DMatrix<f64>,
    spec_norm: f64,
    top_vec: DVector<f64>,
    updates_since_refactor: usize,
}

impl HessianState {
    pub fn identity(n: usize) -> Self {
        Self {
            h: DMatrix::identity(n, n),
            l: DMatrix::identity(n, n),
            spec_norm: 1.0,
            top_vec: deterministic_start(n),
            updates_since_refactor: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// The cached lower-triangular factor, `L L' = H`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn spectral_norm(&self) -> f64 {
        self.spec_norm
    }

    /// `H v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.h * v
    }

    /// `sqrt(v' H v)`, clamped at zero against roundoff.
    pub fn norm_h(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.h * v)).max(0.0).sqrt()
    }

    /// `sqrt(v' H^{-1} v)` via one triangular solve on the cached factor.
    pub fn norm_h_inv(&self, v: &DVector<f64>) -> f64 {
        let mut rhs = v.clone();
        let solved = self.l.solve_lower_triangular_mut(&mut rhs);
        debug_assert!(solved, "factor has positive diagonal by construction");
        rhs.norm()
    }

    /// Both weighted norms of `v`: `(||v||_H, ||v||_{H^{-1}})`.
    pub fn weighted_norms(&self, v: &DVector<f64>) -> (f64, f64) {
        (self.norm_h(v), self.norm_h_inv(v))
    }

    fn refresh_norm(&mut self) {
        let (norm, top) = power_iteration(&self.h, Some(&self.top_vec));
        self.spec_norm = norm;
        self.top_vec = top;
    }

    fn refactor(&mut self) {
        self.updates_since_refactor = 0;
        match cholesky_factor(&self.h) {
            Some(l) => self.l = l,
            None => {
                // Numerical loss of definiteness: repair in place.
                let repaired = ensure_spd(self.h.clone(), DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
                *self = repaired;
            }
        }
    }

    /// Safeguarded BFGS update with the pair `(s, y)`. When the curvature
    /// condition `y's >= curvature_threshold * ||s||^2` fails the state is
    /// left unchanged and `false` is returned. An accepted update satisfies
    /// the secant identity `H_new s = y` exactly.
    pub fn bfgs_update(
        &mut self,
        s: &DVector<f64>,
        y: &DVector<f64>,
        curvature_threshold: f64,
    ) -> bool {
        let ys = y.dot(s);
        if !(ys >= curvature_threshold * s.norm_squared()) || ys <= 0.0 {
            return false;
        }
        let hs = &self.h * s;
        let shs = s.dot(&hs);
        assert!(
            shs > 0.0,
            "s'Hs = {shs} must be positive for a positive-definite H"
        );

        self.h.ger(1.0 / ys, y, y, 1.0);
        self.h.ger(-1.0 / shs, &hs, &hs, 1.0);

        let u = y * (1.0 / ys.sqrt());
        let w = &hs * (1.0 / shs.sqrt());
        chol_rank_one_update(&mut self.l, &u);
        let ok = chol_rank_one_downdate(&mut self.l, &w);
        self.updates_since_refactor += 1;
        if !ok || self.updates_since_refactor >= REFACTOR_PERIOD {
            self.refactor();
        }
        self.refresh_norm();
        true
    }
}

/// Repairs a symmetric matrix into a well-conditioned SPD state:
/// scales down when the spectral norm exceeds `kappa_hi`, then adds the
/// smallest shift from the ladder `{kappa_lo, 10 kappa_lo, ...}` that makes
/// the factorization succeed with smallest eigenvalue at least `kappa_lo`.
pub fn ensure_spd(mut h: DMatrix<f64>, kappa_lo: f64, kappa_hi: f64) -> HessianState {
    let n = h.nrows();
    // Exact symmetry.
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = avg;
            h[(j, i)] = avg;
        }
    }
    let (norm, top) = power_iteration(&h, None);
    if norm > kappa_hi {
        h *= kappa_hi / norm;
    }

    if clears_eigenvalue_floor(&h, kappa_lo) {
        if let Some(l) = cholesky_factor(&h) {
            let (norm, top) = power_iteration(&h, Some(&top));
            return HessianState {
                h,
                l,
                spec_norm: norm,
                top_vec: top,
                updates_since_refactor: 0,
            };
        }
    }

    let mut shift = kappa_lo;
    loop {
        let mut shifted = h.clone();
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        if clears_eigenvalue_floor(&shifted, kappa_lo) {
            if let Some(l) = cholesky_factor(&shifted) {
                let (norm_s, top_s) = power_iteration(&shifted, Some(&top));
                return HessianState {
                    h: shifted,
                    l,
                    spec_norm: norm_s,
                    top_vec: top_s,
                    updates_since_refactor: 0,
                };
            }
        }
        shift *= 10.0;
        assert!(
            shift.is_finite(),
            "shift ladder exhausted while repairing a Hessian"
        );
    }
}

/// Finite-difference Hessian from second differences on the coordinate
/// stencil, symmetric by construction. Costs `n + n(n+1)/2` fresh
/// evaluations given the cached `f(x)`.
pub fn lazy_hessian(
    oracle: &mut BlackBoxOracle,
    x: &DVector<f64>,
    radius: f64,
    cached_fx: f64,
) -> Result<(DMatrix<f64>, u64), CoreError> {
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
    let mut singles = vec![0.0; n];
    let mut probe = x.clone();
    for i in 0..n {
        probe[i] = x[i] + radius;
        singles[i] = oracle.eval(&probe, Purpose::Hessian)?;
        probe[i] = x[i];
    }
    let inv_r2 = 1.0 / (radius * radius);
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            probe[i] += radius;
            probe[j] += radius;
            let fij = oracle.eval(&probe, Purpose::Hessian)?;
            probe[i] = x[i];
            probe[j] = x[j];
            let value = (fij - singles[i] - singles[j] + cached_fx) * inv_r2;
            h[(i, j)] = value;
            h[(j, i)] = value;
        }
    }
    Ok((h, oracle.counter().total() - before))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn spectral_norm_cases() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        assert_relative_eq!(spectral_norm(&d), 5.0, max_relative = 1e-8);
        assert_relative_eq!(spectral_norm(&DMatrix::identity(3, 3)), 1.0, max_relative = 1e-8);
        // Eigenvalues 1 and 3.
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(spectral_norm(&m), 3.0, max_relative = 1e-8);
    }

    #[test]
    fn bfgs_hand_example() {
        // H = I, s = e1, y = 2 e1: the update gives diag(2, 1).
        let mut state = HessianState::identity(2);
        let s = DVector::from_vec(vec![1.0, 0.0]);
        let y = DVector::from_vec(vec![2.0, 0.0]);
        assert!(state.bfgs_update(&s, &y, DEFAULT_CURVATURE_THRESHOLD));
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        assert!((state.matrix() - expect).norm() < 1e-12);
        assert_relative_eq!(state.spectral_norm(), 2.0, max_relative = 1e-8);
    }

    #[test]
    fn bfgs_safeguard_rejects_negative_curvature() {
        let mut state = HessianState::identity(3);
        let s = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = -&s;
        let before = state.matrix().clone();
        assert!(!state.bfgs_update(&s, &y, DEFAULT_CURVATURE_THRESHOLD));
        assert_eq!(state.matrix(), &before);
    }

    #[test]
    fn bfgs_secant_identity() {
        let mut rng = stream(1, domain::TRIAL, 0);
        let n = 8;
        let a = random_spd(n, &mut rng);
        let mut state = ensure_spd(random_spd(n, &mut rng), DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
        for _ in 0..50 {
            let s = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let y = &a * &s;
            assert!(state.bfgs_update(&s, &y, DEFAULT_CURVATURE_THRESHOLD));
            let err = (state.apply(&s) - &y).norm();
            assert!(err <= 1e-10 * y.norm().max(1.0), "secant error {err}");
        }
    }

    #[test]
    fn bfgs_factor_stays_consistent_over_long_chains() {
        let mut rng = stream(2, domain::TRIAL, 1);
        let n = 6;
        let a = random_spd(n, &mut rng);
        let mut state = HessianState::identity(n);
        for k in 0..1000 {
            let s = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let y = &a * &s;
            assert!(state.bfgs_update(&s, &y, DEFAULT_CURVATURE_THRESHOLD));
            if k % 100 == 0 {
                let recon = state.factor() * state.factor().transpose();
                let rel = (&recon - state.matrix()).norm() / state.matrix().norm();
                assert!(rel <= 1e-10, "factor drift {rel} at update {k}");
            }
        }
        // Positive definiteness held throughout the chain.
        let eigs = state.matrix().clone().symmetric_eigen().eigenvalues;
        assert!(eigs.min() > 0.0);
    }

    #[test]
    fn lazy_hessian_exact_on_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let a2 = a.clone();
        let mut oracle = BlackBoxOracle::new(2, move |x| 0.5 * x.dot(&(&a2 * x)));
        let x = DVector::from_vec(vec![0.7, -0.4]);
        let fx = oracle.eval(&x, Purpose::Misc).unwrap();
        let (h, evals) = lazy_hessian(&mut oracle, &x, 0.05, fx).unwrap();
        assert_eq!(evals, 2 + 3);
        assert!((h - a).norm() < 1e-9);
    }

    #[test]
    fn lazy_hessian_on_constant_lifts_to_floor() {
        let mut oracle = BlackBoxOracle::new(2, |_| 1.0);
        let x = DVector::zeros(2);
        let fx = oracle.eval(&x, Purpose::Misc).unwrap();
        let (h, _) = lazy_hessian(&mut oracle, &x, 0.1, fx).unwrap();
        assert_eq!(h, DMatrix::zeros(2, 2));
        let state = ensure_spd(h, DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
        assert!((state.matrix() - DMatrix::identity(2, 2) * DEFAULT_KAPPA_LO).norm() < 1e-20);
    }

    #[test]
    fn lazy_hessian_cubic_hand_value() {
        // f(x) = x^3 in one dimension at x = 0 with radius 0.01:
        // (8r^3 - 2r^3) / r^2 = 6r = 0.06.
        let mut oracle = BlackBoxOracle::new(1, |x| x[0].powi(3));
        let x = DVector::zeros(1);
        let fx = oracle.eval(&x, Purpose::Misc).unwrap();
        let (h, _) = lazy_hessian(&mut oracle, &x, 0.01, fx).unwrap();
        assert_relative_eq!(h[(0, 0)], 0.06, max_relative = 1e-9);
    }

    #[test]
    fn lazy_hessian_error_bound_on_smooth_f() {
        // f(x) = sum exp(x_i) has Hessian diag(exp(x_i)) and Hessian
        // Lipschitz constant exp(max |x| + radius) on the probed box; the
        // second-difference error obeys ((sqrt(2)+1) n L_H / 3) * radius.
        let n = 4;
        let mut oracle = BlackBoxOracle::new(n, |x| x.iter().map(|v| v.exp()).sum::<f64>());
        let x = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.0]);
        let fx = oracle.eval(&x, Purpose::Misc).unwrap();
        let lipschitz_hess = (x.amax() + 2.0 * 0.01_f64).exp();
        for radius in [1e-3, 1e-2] {
            let (h, _) = lazy_hessian(&mut oracle, &x, radius, fx).unwrap();
            let true_h = DMatrix::from_diagonal(&x.map(|v| v.exp()));
            let err = spectral_norm(&(h - true_h));
            let bound = (2.0_f64.sqrt() + 1.0) * n as f64 * lipschitz_hess / 3.0 * radius;
            assert!(err <= bound, "radius {radius}: error {err} vs bound {bound}");
        }
    }

    #[test]
    fn ensure_spd_cases() {
        // Already SPD within bounds: unchanged.
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let state = ensure_spd(d.clone(), DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
        assert_eq!(state.matrix(), &d);

        // Zero lifts to the floor.
        let state = ensure_spd(DMatrix::zeros(3, 3), DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
        assert!((state.matrix() - DMatrix::identity(3, 3) * DEFAULT_KAPPA_LO).norm() < 1e-20);

        // Indefinite: shifted by the smallest ladder value that works, and
        // the minimum eigenvalue ends up at or above the floor.
        let ind = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0]));
        let state = ensure_spd(ind, DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
        let eigs = state.matrix().clone().symmetric_eigen().eigenvalues;
        assert!(eigs.min() >= DEFAULT_KAPPA_LO * (1.0 - 1e-9));
        // Ladder in powers of ten starting at kappa_lo: 10 is the first
        // shift clearing the -1 eigenvalue.
        assert_relative_eq!(state.matrix()[(0, 0)], 9.0, max_relative = 1e-12);
        assert_relative_eq!(state.matrix()[(1, 1)], 11.0, max_relative = 1e-12);
    }

    #[test]
    fn ensure_spd_clips_large_norms() {
        let big = DMatrix::identity(2, 2) * 1e10;
        let state = ensure_spd(big, DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
        assert!(state.spectral_norm() <= DEFAULT_KAPPA_HI * (1.0 + 1e-8));
    }

    #[test]
    fn ensure_spd_leaves_clustered_spectra_untouched() {
        // Power-iteration-unfriendly spectrum: many close eigenvalues. The
        // shifted-Cholesky floor test must not trigger a spurious repair.
        let mut rng = stream(17, domain::TRIAL, 5);
        for _ in 0..20 {
            let n = 20;
            let d = DVector::from_fn(n, |_, _| rng.random_range(0.5..5.0));
            let h = DMatrix::from_diagonal(&d);
            let state = ensure_spd(h.clone(), DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
            assert_eq!(state.matrix(), &h, "already-SPD matrix was modified");
        }
    }

    #[test]
    fn weighted_norms_cases() {
        let id = HessianState::identity(3);
        let v = DVector::from_vec(vec![1.0, 2.0, -2.0]);
        let (nh, nhi) = id.weighted_norms(&v);
        assert_relative_eq!(nh, 3.0, max_relative = 1e-12);
        assert_relative_eq!(nhi, 3.0, max_relative = 1e-12);

        let d = ensure_spd(
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0])),
            DEFAULT_KAPPA_LO,
            DEFAULT_KAPPA_HI,
        );
        let v1 = DVector::from_vec(vec![1.0]);
        let (nh, nhi) = d.weighted_norms(&v1);
        assert_relative_eq!(nh, 2.0, max_relative = 1e-12);
        assert_relative_eq!(nhi, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn weighted_norm_product_dominates_plain_norm() {
        // Generalized Cauchy-Schwarz: ||v||_H * ||v||_{H^{-1}} >= ||v||^2.
        let mut rng = stream(9, domain::TRIAL, 2);
        for _ in 0..1000 {
            let n = 5;
            let state = ensure_spd(random_spd(n, &mut rng), DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
            let v = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let (nh, nhi) = state.weighted_norms(&v);
            assert!(nh * nhi >= v.norm_squared() * (1.0 - 1e-10));
        }
    }

    #[test]
    fn factor_matches_matrix() {
        let mut rng = stream(4, domain::TRIAL, 3);
        let state = ensure_spd(random_spd(7, &mut rng), DEFAULT_KAPPA_LO, DEFAULT_KAPPA_HI);
        let recon = state.factor() * state.factor().transpose();
        let rel = (&recon - state.matrix()).norm() / state.matrix().norm();
        assert!(rel <= 1e-10);
    }
}
