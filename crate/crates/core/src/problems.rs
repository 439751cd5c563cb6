//! Problem zoo: a synthetic LASSO generator, regularized classification
//! losses over sparse datasets, a LIBSVM-format parser, and a truth-powered
//! reference optimizer.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::error::CoreError;
use crate::oracle::{BlackBoxOracle, CompositeProblem, ProblemConstants, Regularizer, Truth};
use crate::rng::{domain, stream};

/// Sparse classification dataset: rows of `(index, value)` pairs (0-based
/// internally) and labels in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub labels: Vec<f64>,
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LibsvmErrorKind {
    BadLabel(String),
    BadPair(String),
    BadIndex(String),
    BadValue(String),
    IndexOrder(String),
}

/// Parse failure, carrying the 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct LibsvmError {
    pub line: usize,
    pub kind: LibsvmErrorKind,
}

impl fmt::Display for LibsvmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match &self.kind {
            LibsvmErrorKind::BadLabel(t) => format!("unknown label `{t}`"),
            LibsvmErrorKind::BadPair(t) => format!("malformed index:value pair `{t}`"),
            LibsvmErrorKind::BadIndex(t) => format!("invalid feature index `{t}`"),
            LibsvmErrorKind::BadValue(t) => format!("invalid feature value `{t}`"),
            LibsvmErrorKind::IndexOrder(t) => {
                format!("feature indices must strictly increase, got `{t}`")
            }
        };
        write!(f, "line {}: {}", self.line, what)
    }
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn row_dot(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.rows[i].iter().map(|&(j, v)| v * x[j]).sum()
    }

    /// Parses the LIBSVM text format: one `label idx:val idx:val ...` line
    /// per sample, 1-based strictly increasing indices, labels in
    /// {+1, -1, 1, 0} (0 maps to -1), `#`-prefixed comment lines skipped.
    pub fn parse_libsvm(text: &str) -> Result<Self, LibsvmError> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut max_index = 0usize;
        for (line_idx, raw) in text.lines().enumerate() {
            let line_no = line_idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |kind| LibsvmError {
                line: line_no,
                kind,
            };
            let mut tokens = line.split_whitespace();
            let label_tok = tokens.next().expect("nonempty line has a first token");
            let label = match label_tok.parse::<f64>() {
                Ok(v) if v == 1.0 => 1.0,
                Ok(v) if v == -1.0 || v == 0.0 => -1.0,
                _ => return Err(err(LibsvmErrorKind::BadLabel(label_tok.into()))),
            };
            let mut row = Vec::new();
            let mut last_index = 0usize; // 1-based
            for tok in tokens {
                let (idx_str, val_str) = tok
                    .split_once(':')
                    .ok_or_else(|| err(LibsvmErrorKind::BadPair(tok.into())))?;
                let idx: usize = idx_str
                    .parse()
                    .map_err(|_| err(LibsvmErrorKind::BadIndex(idx_str.into())))?;
                if idx == 0 {
                    return Err(err(LibsvmErrorKind::BadIndex(idx_str.into())));
                }
                let value: f64 = val_str
                    .parse()
                    .map_err(|_| err(LibsvmErrorKind::BadValue(val_str.into())))?;
                if !value.is_finite() {
                    return Err(err(LibsvmErrorKind::BadValue(val_str.into())));
                }
                if idx <= last_index {
                    return Err(err(LibsvmErrorKind::IndexOrder(tok.into())));
                }
                row.push((idx - 1, value));
                last_index = idx;
            }
            max_index = max_index.max(last_index);
            rows.push(row);
            labels.push(label);
        }
        Ok(Dataset {
            rows,
            labels,
            n_features: max_index,
        })
    }

    /// Canonical LIBSVM serialization; `parse_libsvm` round-trips it.
    pub fn to_libsvm_string(&self) -> String {
        let mut out = String::new();
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            out.push_str(if label > 0.0 { "+1" } else { "-1" });
            for &(idx, value) in row {
                out.push_str(&format!(" {}:{:e}", idx + 1, value));
            }
            out.push('\n');
        }
        out
    }

    /// Largest eigenvalue of `A' A` by power iteration on the sparse rows.
    fn gram_spectral_bound(&self) -> f64 {
        let n = self.n_features;
        if n == 0 || self.rows.is_empty() {
            return 0.0;
        }
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut estimate: f64 = 0.0;
        for _ in 0..200 {
            let mut w: DVector<f64> = DVector::zeros(n);
            for row in &self.rows {
                let dot: f64 = row.iter().map(|&(j, val)| val * v[j]).sum();
                for &(j, val) in row {
                    w[j] += dot * val;
                }
            }
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            v = w / norm;
            if (norm - estimate).abs() <= 1e-10 * norm {
                return norm;
            }
            estimate = norm;
        }
        estimate
    }
}

/// Which objective to build.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    /// `||Ax - b||^2 / 2 + weight ||x||_1` on a generated instance.
    Lasso {
        n: usize,
        p: usize,
        sparsity: f64,
        noise: f64,
        weight: f64,
    },
    /// Logistic loss with an l1 penalty.
    LogisticL1 { weight: f64 },
    /// Logistic loss with a squared l2 penalty.
    LogisticL2 { weight: f64 },
    /// Sigmoid loss with an elastic net penalty.
    ElasticBinary { l1: f64, l2: f64 },
    /// `1 - tanh` margin loss with an l1 penalty; nonconvex.
    SvmTanh { weight: f64 },
}

/// Problem specification: a kind, the dataset it runs on (classification
/// kinds only), and the instance seed.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub dataset: Option<Arc<Dataset>>,
    pub seed: u64,
}

/// A generated LASSO instance with its ground truth.
#[derive(Debug, Clone)]
pub struct LassoInstance {
    pub design: DMatrix<f64>,
    pub x_true: DVector<f64>,
    pub observations: DVector<f64>,
}

/// Draws a column-unit Gaussian design, a sparse Gaussian ground truth, and
/// noisy observations.
pub fn lasso_instance(n: usize, p: usize, sparsity: f64, noise: f64, seed: u64) -> LassoInstance {
    let mut rng = stream(seed, domain::PROBLEM, 0);
    let mut design = DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(&mut rng));
    for mut col in design.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    let support_size = (sparsity * n as f64).ceil() as usize;
    let mut x_true = DVector::zeros(n);
    for idx in sample(&mut rng, n, support_size.min(n)) {
        x_true[idx] = StandardNormal.sample(&mut rng);
    }
    let mut observations = &design * &x_true;
    for v in observations.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += noise * e;
    }
    LassoInstance {
        design,
        x_true,
        observations,
    }
}

fn lasso_problem(instance: &LassoInstance, weight: f64) -> CompositeProblem {
    let n = instance.design.ncols();
    let a = Arc::new(instance.design.clone());
    let b = Arc::new(instance.observations.clone());

    // Column-major gemv streams the design exactly once per call; the
    // residual stays register/L1 resident.
    let (a_f, b_f) = (Arc::clone(&a), Arc::clone(&b));
    let oracle = BlackBoxOracle::new(n, move |x| {
        let mut r = (*b_f).clone();
        r.gemv(1.0, &a_f, x, -1.0);
        0.5 * r.norm_squared()
    });

    // L_f = lambda_max(A'A), via power iteration on the Gram operator.
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lipschitz: f64 = 0.0;
    for _ in 0..200 {
        let w = a.transpose() * (&*a * &v);
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        v = w / norm;
        if (norm - lipschitz).abs() <= 1e-10 * norm {
            lipschitz = norm;
            break;
        }
        lipschitz = norm;
    }

    let (a_g, b_g) = (Arc::clone(&a), Arc::clone(&b));
    let grad = Arc::new(move |x: &DVector<f64>| {
        let mut r = (*b_g).clone();
        r.gemv(1.0, &a_g, x, -1.0);
        let mut g = DVector::zeros(x.len());
        g.gemv_tr(1.0, &a_g, &r, 0.0);
        g
    });
    let a_h = Arc::clone(&a);
    let hess_vec = Arc::new(move |_x: &DVector<f64>, v: &DVector<f64>| {
        let mut av = DVector::zeros(a_h.nrows());
        av.gemv(1.0, &a_h, v, 0.0);
        let mut out = DVector::zeros(v.len());
        out.gemv_tr(1.0, &a_h, &av, 0.0);
        out
    });

    let mut problem = CompositeProblem::new(oracle, Regularizer::L1 { weight });
    problem.constants = ProblemConstants {
        lipschitz_grad: Some(lipschitz),
        lipschitz_hess: Some(0.0),
        strong_convexity: None,
    };
    problem.truth = Some(Truth {
        grad,
        hess_vec: Some(hess_vec),
        x_star: None,
        f_star: None,
    });
    problem
}

/// Margin-loss family shared by the classification objectives.
#[derive(Clone, Copy)]
enum MarginLoss {
    Logistic,
    Sigmoid,
    TanhHinge,
}

impl MarginLoss {
    fn value(self, z: f64) -> f64 {
        match self {
            // ln(1 + exp(-z)), overflow-safe.
            MarginLoss::Logistic => (-z).max(0.0) + (-z.abs()).exp().ln_1p(),
            MarginLoss::Sigmoid => 1.0 / (1.0 + z.exp().min(f64::MAX)),
            MarginLoss::TanhHinge => 1.0 - z.tanh(),
        }
    }

    fn slope(self, z: f64) -> f64 {
        match self {
            MarginLoss::Logistic => -1.0 / (1.0 + z.exp().min(f64::MAX)),
            MarginLoss::Sigmoid => {
                let s = 1.0 / (1.0 + z.exp().min(f64::MAX));
                -s * (1.0 - s)
            }
            MarginLoss::TanhHinge => {
                let t = z.tanh();
                t * t - 1.0
            }
        }
    }

    fn curvature(self, z: f64) -> f64 {
        match self {
            MarginLoss::Logistic => {
                let s = 1.0 / (1.0 + z.exp().min(f64::MAX));
                s * (1.0 - s)
            }
            MarginLoss::Sigmoid => {
                let s = 1.0 / (1.0 + z.exp().min(f64::MAX));
                s * (1.0 - s) * (2.0 * s - 1.0)
            }
            MarginLoss::TanhHinge => {
                let t = z.tanh();
                2.0 * t * (1.0 - t * t)
            }
        }
    }

    /// Bound on |second derivative| of the scalar loss.
    fn curvature_bound(self) -> f64 {
        match self {
            MarginLoss::Logistic => 0.25,
            MarginLoss::Sigmoid => 1.0 / (6.0 * 3.0_f64.sqrt()),
            MarginLoss::TanhHinge => 4.0 / (3.0 * 3.0_f64.sqrt()),
        }
    }
}

fn margin_problem(data: Arc<Dataset>, loss: MarginLoss, reg: Regularizer) -> CompositeProblem {
    let n = data.n_features;
    let p = data.n_samples() as f64;

    let d_f = Arc::clone(&data);
    let oracle = BlackBoxOracle::new(n, move |x| {
        (0..d_f.n_samples())
            .map(|i| loss.value(d_f.labels[i] * d_f.row_dot(i, x)))
            .sum::<f64>()
            / p
    });

    let d_g = Arc::clone(&data);
    let grad = Arc::new(move |x: &DVector<f64>| {
        let mut g = DVector::zeros(x.len());
        for i in 0..d_g.n_samples() {
            let b = d_g.labels[i];
            let coeff = loss.slope(b * d_g.row_dot(i, x)) * b;
            for &(j, v) in &d_g.rows[i] {
                g[j] += coeff * v;
            }
        }
        g / p
    });

    let d_h = Arc::clone(&data);
    let hess_vec = Arc::new(move |x: &DVector<f64>, v: &DVector<f64>| {
        let mut out = DVector::zeros(x.len());
        for i in 0..d_h.n_samples() {
            let b = d_h.labels[i];
            let w = loss.curvature(b * d_h.row_dot(i, x));
            let av: f64 = d_h.rows[i].iter().map(|&(j, val)| val * v[j]).sum();
            for &(j, val) in &d_h.rows[i] {
                out[j] += w * av * val; // b^2 = 1
            }
        }
        out / p
    });

    let gram = data.gram_spectral_bound();
    let mut problem = CompositeProblem::new(oracle, reg);
    problem.constants = ProblemConstants {
        lipschitz_grad: Some(loss.curvature_bound() * gram / p),
        lipschitz_hess: None,
        strong_convexity: None,
    };
    problem.truth = Some(Truth {
        grad,
        hess_vec: Some(hess_vec),
        x_star: None,
        f_star: None,
    });
    problem
}

/// Builds the composite problem described by `spec`.
pub fn build_problem(spec: &ProblemSpec) -> Result<CompositeProblem, CoreError> {
    match spec.kind {
        ProblemKind::Lasso {
            n,
            p,
            sparsity,
            noise,
            weight,
        } => {
            let instance = lasso_instance(n, p, sparsity, noise, spec.seed);
            Ok(lasso_problem(&instance, weight))
        }
        ref kind => {
            let data = spec.dataset.clone().ok_or_else(|| {
                CoreError::InvalidConfig(format!("{kind:?} requires a dataset"))
            })?;
            Ok(match *kind {
                ProblemKind::LogisticL1 { weight } => {
                    margin_problem(data, MarginLoss::Logistic, Regularizer::L1 { weight })
                }
                ProblemKind::LogisticL2 { weight } => {
                    margin_problem(data, MarginLoss::Logistic, Regularizer::SqL2 { weight })
                }
                ProblemKind::ElasticBinary { l1, l2 } => {
                    margin_problem(data, MarginLoss::Sigmoid, Regularizer::ElasticNet { l1, l2 })
                }
                ProblemKind::SvmTanh { weight } => {
                    margin_problem(data, MarginLoss::TanhHinge, Regularizer::L1 { weight })
                }
                ProblemKind::Lasso { .. } => unreachable!(),
            })
        }
    }
}

/// Generates a small synthetic classification dataset in the parser-facing
/// format: a planted separator with label noise on sparse Gaussian rows.
pub fn synthetic_classification(
    n_features: usize,
    n_samples: usize,
    density: f64,
    seed: u64,
) -> Dataset {
    let mut rng = stream(seed, domain::PROBLEM, 1);
    let separator: Vec<f64> = (0..n_features)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut rows = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut row = Vec::new();
        for j in 0..n_features {
            if rng.random::<f64>() < density {
                let v: f64 = StandardNormal.sample(&mut rng);
                row.push((j, v));
            }
        }
        if row.is_empty() {
            let j = rng.random_range(0..n_features);
            let v: f64 = StandardNormal.sample(&mut rng);
            row.push((j, v));
        }
        let margin: f64 = row.iter().map(|&(j, v)| v * separator[j]).sum();
        let noise: f64 = StandardNormal.sample(&mut rng);
        let label = if margin + 0.3 * noise >= 0.0 { 1.0 } else { -1.0 };
        rows.push(row);
        labels.push(label);
    }
    Dataset {
        rows,
        labels,
        n_features,
    }
}

const REFERENCE_MAX_ITERS: usize = 1_000_000;
const REFERENCE_RESIDUAL_TOL: f64 = 1e-12;

/// First-order reference optimizer: monotone accelerated proximal gradient
/// with exact gradients and step `1/L_f`, run until the prox-gradient
/// residual drops below 1e-12. For nonconvex smooth parts the result is a
/// stationary point, not a certified global optimum.
pub fn reference_optimum(problem: &CompositeProblem) -> Result<(DVector<f64>, f64), CoreError> {
    let truth = problem
        .truth
        .as_ref()
        .ok_or(CoreError::MissingTruth("reference optimum needs true gradients"))?;
    let grad = Arc::clone(&truth.grad);
    let lipschitz = problem
        .constants
        .lipschitz_grad
        .ok_or(CoreError::MissingTruth("reference optimum needs a Lipschitz constant"))?
        .max(f64::MIN_POSITIVE);
    let reg = problem.reg.clone();
    let n = problem.dimension();
    let step = 1.0 / lipschitz;

    // Composite values come from a scratch clone; its counter is discarded.
    let mut scratch = problem.oracle.clone();
    let mut composite = |x: &DVector<f64>| -> Result<f64, CoreError> {
        Ok(scratch.eval(x, crate::oracle::Purpose::Misc)? + reg.value(x))
    };

    let mut x = DVector::zeros(n);
    let mut y = x.clone();
    let mut theta: f64 = 1.0;
    let mut f_x = composite(&x)?;
    let mut residual = f64::INFINITY;

    for _ in 0..REFERENCE_MAX_ITERS {
        let g = grad(&y);
        let mut candidate = reg.prox(&(&y - step * &g), step)?;
        // The prox-gradient residual at y comes for free from the step just
        // taken; at convergence y and candidate coincide at the fixed point.
        residual = lipschitz * (&y - &candidate).norm();
        let mut f_cand = composite(&candidate)?;
        if residual <= REFERENCE_RESIDUAL_TOL {
            return Ok((candidate, f_cand));
        }
        if f_cand > f_x {
            // Momentum overshot (or the smooth part is nonconvex): restart
            // from the last iterate, which majorization makes a descent step.
            let gx = grad(&x);
            candidate = reg.prox(&(&x - step * &gx), step)?;
            f_cand = composite(&candidate)?;
            theta = 1.0;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        y = &candidate + ((theta - 1.0) / theta_next) * (&candidate - &x);
        x = candidate;
        f_x = f_cand;
        theta = theta_next;
    }
    Err(CoreError::ReferenceDidNotConverge {
        residual,
        iters: REFERENCE_MAX_ITERS,
    })
}
