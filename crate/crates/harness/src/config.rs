//! Plain-text experiment configuration.
//!
//! The format is line-oriented `key = value` pairs grouped into sections:
//!
//! ```text
//! [problem]
//! kind = lasso
//! n = 500
//! p = 200
//! zeta = 5e-3
//!
//! [run]
//! budget = 300*(n+1)
//! gap_tol = 1e-16
//! seeds = 0 1 2
//!
//! [solver zopn-fd-bfgs]
//! method = zopn
//! estimator = forward
//! hessian = bfgs
//! delta = 5e-10
//!
//! [solver fd-proxgd]
//! method = proxgd
//! estimator = forward
//! delta = 5e-10
//! step = tune
//! ```
//!
//! `#` starts a comment. One `[solver NAME]` section per solver; the name
//! becomes the legend label and output-file stem.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use zopn_core::problems::{Dataset, ProblemKind, ProblemSpec};
use zopn_core::{GradEstimator, HessianStrategy, RadiusSchedule};

use crate::HarnessError;

fn config_err(line: usize, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(format!("line {}: {}", line, msg.into()))
}

/// Oracle budget, either a fixed call count or a multiple of `n + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Fixed(u64),
    PerDimension(u64),
}

impl Budget {
    pub fn resolve(&self, n: usize) -> u64 {
        match *self {
            Budget::Fixed(v) => v,
            Budget::PerDimension(k) => k * (n as u64 + 1),
        }
    }

    pub fn parse(text: &str, line: usize) -> Result<Self, HarnessError> {
        let t = text.replace(' ', "");
        if let Some(prefix) = t.strip_suffix("*(n+1)") {
            let k = prefix
                .parse()
                .map_err(|_| config_err(line, format!("bad budget expression `{text}`")))?;
            return Ok(Budget::PerDimension(k));
        }
        t.parse()
            .map(Budget::Fixed)
            .map_err(|_| config_err(line, format!("bad budget `{text}`")))
    }
}

/// `[problem]` section.
#[derive(Debug, Clone)]
pub struct ProblemSection {
    pub kind: String,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub sparsity: f64,
    pub noise: f64,
    pub zeta: f64,
    pub zeta2: f64,
    pub dataset: Option<PathBuf>,
    pub seed: u64,
}

impl ProblemSection {
    /// Resolves the section into a buildable problem spec. Classification
    /// kinds need the dataset loaded by the caller.
    pub fn problem_spec(
        &self,
        dataset: Option<Arc<Dataset>>,
    ) -> Result<ProblemSpec, HarnessError> {
        let kind = match self.kind.as_str() {
            "lasso" => ProblemKind::Lasso {
                n: self
                    .n
                    .ok_or_else(|| HarnessError::Config("lasso needs `n`".into()))?,
                p: self.p.unwrap_or_else(|| {
                    // Default from the experimental protocol: p = 0.4 n.
                    (0.4 * self.n.unwrap_or(0) as f64).round().max(1.0) as usize
                }),
                sparsity: self.sparsity,
                noise: self.noise,
                weight: self.zeta,
            },
            "logistic_l1" => ProblemKind::LogisticL1 { weight: self.zeta },
            "logistic_l2" => ProblemKind::LogisticL2 { weight: self.zeta },
            "elastic" => ProblemKind::ElasticBinary {
                l1: self.zeta,
                l2: self.zeta2,
            },
            "svm_tanh" => ProblemKind::SvmTanh { weight: self.zeta },
            other => {
                return Err(HarnessError::Config(format!("unknown problem kind `{other}`")))
            }
        };
        if !matches!(kind, ProblemKind::Lasso { .. }) && dataset.is_none() {
            return Err(HarnessError::Config(format!(
                "problem kind `{}` requires `dataset = <path>`",
                self.kind
            )));
        }
        Ok(ProblemSpec {
            kind,
            dataset,
            seed: self.seed,
        })
    }
}

/// `[run]` section.
#[derive(Debug, Clone)]
pub struct RunSection {
    pub budget: Budget,
    pub gap_tol: f64,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            budget: Budget::PerDimension(300),
            gap_tol: 1e-16,
            seeds: Vec::new(),
            out: None,
        }
    }
}

/// Which solver family a `[solver ...]` section configures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Zopn,
    ProxGd,
}

/// Constant step choice for baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepChoice {
    Tune,
    Fixed(f64),
}

/// One `[solver NAME]` section.
#[derive(Debug, Clone)]
pub struct SolverSection {
    pub name: String,
    pub method: Method,
    pub estimator: GradEstimator,
    pub hessian: HessianStrategy,
    pub schedule: RadiusSchedule,
    pub step: StepChoice,
    pub c1: f64,
    pub c2: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub gamma: f64,
    pub step_tol: f64,
    pub max_inner: usize,
    pub runs: usize,
}

impl SolverSection {
    fn new(name: String) -> Self {
        Self {
            name,
            method: Method::Zopn,
            estimator: GradEstimator::Forward,
            hessian: HessianStrategy::bfgs(),
            schedule: RadiusSchedule::Constant(5e-10),
            step: StepChoice::Tune,
            c1: 1e-4,
            c2: 1e-8,
            backtrack: 0.5,
            initial_step: 1.0,
            gamma: 0.9,
            step_tol: 0.0,
            max_inner: 1000,
            runs: 10,
        }
    }
}

/// A fully parsed experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub run: RunSection,
    pub solvers: Vec<SolverSection>,
}

fn parse_estimator(value: &str, line: usize) -> Result<GradEstimator, HarnessError> {
    let mut parts = value.splitn(2, ':');
    let head = parts.next().unwrap_or_default();
    let tail = parts.next();
    let need_num = |what: &str| {
        tail.ok_or_else(|| config_err(line, format!("estimator `{head}` needs `{head}:{what}`")))
    };
    match head {
        "forward" => Ok(GradEstimator::Forward),
        "central" => Ok(GradEstimator::Central),
        "gaussian" => {
            let samples = need_num("N")?
                .parse()
                .map_err(|_| config_err(line, "bad sample count"))?;
            Ok(GradEstimator::Gaussian { samples })
        }
        "spherical" => {
            let samples = need_num("N")?
                .parse()
                .map_err(|_| config_err(line, "bad sample count"))?;
            Ok(GradEstimator::Spherical { samples })
        }
        "dgs" => {
            let inner_radius = need_num("RADIUS")?
                .parse()
                .map_err(|_| config_err(line, "bad inner radius"))?;
            Ok(GradEstimator::DoubleGaussian { inner_radius })
        }
        other => Err(config_err(line, format!("unknown estimator `{other}`"))),
    }
}

fn parse_hessian(value: &str, line: usize) -> Result<HessianStrategy, HarnessError> {
    let mut parts = value.splitn(2, ':');
    let head = parts.next().unwrap_or_default();
    let tail = parts.next();
    match head {
        "identity" => Ok(HessianStrategy::Identity),
        "bfgs" => {
            let curvature_threshold = match tail {
                Some(t) => t
                    .parse()
                    .map_err(|_| config_err(line, "bad curvature threshold"))?,
                None => 1e-9,
            };
            Ok(HessianStrategy::Bfgs {
                curvature_threshold,
            })
        }
        "lazy" => {
            // Period defaults to the dimension; 0 is the placeholder the
            // runner replaces with n.
            let period = match tail {
                Some(t) => t.parse().map_err(|_| config_err(line, "bad lazy period"))?,
                None => 0,
            };
            Ok(HessianStrategy::Lazy { period })
        }
        other => Err(config_err(line, format!("unknown hessian strategy `{other}`"))),
    }
}

fn parse_schedule(value: &str, line: usize) -> Result<RadiusSchedule, HarnessError> {
    let parts: Vec<&str> = value.split(':').collect();
    let num = |s: &str| -> Result<f64, HarnessError> {
        s.parse()
            .map_err(|_| config_err(line, format!("bad number `{s}` in schedule")))
    };
    match parts.as_slice() {
        ["const", v] => Ok(RadiusSchedule::Constant(num(v)?)),
        ["power", init, exp] => Ok(RadiusSchedule::PowerDecay {
            initial: num(init)?,
            exponent: num(exp)?,
        }),
        ["dexp", base, cap, floor] => Ok(RadiusSchedule::DoublyExponential {
            base: num(base)?,
            cap: num(cap)?,
            floor: num(floor)?,
        }),
        _ => Err(config_err(
            line,
            format!("unknown schedule `{value}` (expected const:X, power:D0:S, dexp:Q:CAP:FLOOR)"),
        )),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Problem,
            Run,
            Solver(usize),
        }

        let mut problem: Option<ProblemSection> = None;
        let mut run = RunSection::default();
        let mut solvers: Vec<SolverSection> = Vec::new();
        let mut current = Section::None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }

            if let Some(header) = line.strip_prefix('[') {
                let header = header
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(line_no, "unterminated section header"))?
                    .trim();
                current = match header {
                    "problem" => {
                        problem = Some(ProblemSection {
                            kind: String::new(),
                            n: None,
                            p: None,
                            sparsity: 0.01,
                            noise: 1e-4,
                            zeta: 5e-3,
                            zeta2: 0.0,
                            dataset: None,
                            seed: 0,
                        });
                        Section::Problem
                    }
                    "run" => Section::Run,
                    other => {
                        let name = other
                            .strip_prefix("solver")
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .ok_or_else(|| {
                                config_err(line_no, format!("unknown section `[{other}]`"))
                            })?;
                        solvers.push(SolverSection::new(name.to_string()));
                        Section::Solver(solvers.len() - 1)
                    }
                };
                continue;
            }

            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line_no, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            let parse_f64 = |v: &str| -> Result<f64, HarnessError> {
                v.parse()
                    .map_err(|_| config_err(line_no, format!("bad number `{v}`")))
            };

            match current {
                Section::None => {
                    return Err(config_err(line_no, "key outside of any section"));
                }
                Section::Problem => {
                    let section = problem.as_mut().expect("set when entering the section");
                    match key {
                        "kind" => section.kind = value.to_string(),
                        "n" => {
                            section.n = Some(value.parse().map_err(|_| {
                                config_err(line_no, format!("bad integer `{value}`"))
                            })?)
                        }
                        "p" => {
                            section.p = Some(value.parse().map_err(|_| {
                                config_err(line_no, format!("bad integer `{value}`"))
                            })?)
                        }
                        "sparsity" => section.sparsity = parse_f64(value)?,
                        "noise" => section.noise = parse_f64(value)?,
                        "zeta" => section.zeta = parse_f64(value)?,
                        "zeta2" => section.zeta2 = parse_f64(value)?,
                        "dataset" => section.dataset = Some(PathBuf::from(value)),
                        "seed" => {
                            section.seed = value.parse().map_err(|_| {
                                config_err(line_no, format!("bad integer `{value}`"))
                            })?
                        }
                        other => {
                            return Err(config_err(line_no, format!("unknown problem key `{other}`")))
                        }
                    }
                }
                Section::Run => match key {
                    "budget" => run.budget = Budget::parse(value, line_no)?,
                    "gap_tol" => run.gap_tol = parse_f64(value)?,
                    "seeds" => {
                        run.seeds = value
                            .split([' ', ','])
                            .filter(|t| !t.is_empty())
                            .map(|t| {
                                t.parse().map_err(|_| {
                                    config_err(line_no, format!("bad seed `{t}`"))
                                })
                            })
                            .collect::<Result<_, _>>()?
                    }
                    "out" => run.out = Some(PathBuf::from(value)),
                    other => {
                        return Err(config_err(line_no, format!("unknown run key `{other}`")))
                    }
                },
                Section::Solver(i) => {
                    let solver = &mut solvers[i];
                    match key {
                        "method" => {
                            solver.method = match value {
                                "zopn" => Method::Zopn,
                                "proxgd" => Method::ProxGd,
                                other => {
                                    return Err(config_err(
                                        line_no,
                                        format!("unknown method `{other}`"),
                                    ))
                                }
                            }
                        }
                        "estimator" => solver.estimator = parse_estimator(value, line_no)?,
                        "hessian" => solver.hessian = parse_hessian(value, line_no)?,
                        "schedule" => solver.schedule = parse_schedule(value, line_no)?,
                        "delta" => {
                            solver.schedule = RadiusSchedule::Constant(parse_f64(value)?)
                        }
                        "step" => {
                            solver.step = if value == "tune" {
                                StepChoice::Tune
                            } else {
                                StepChoice::Fixed(parse_f64(value)?)
                            }
                        }
                        "c1" => solver.c1 = parse_f64(value)?,
                        "c2" => solver.c2 = parse_f64(value)?,
                        "beta" => solver.backtrack = parse_f64(value)?,
                        "initial_step" => solver.initial_step = parse_f64(value)?,
                        "gamma" => solver.gamma = parse_f64(value)?,
                        "step_tol" => solver.step_tol = parse_f64(value)?,
                        "max_inner" => {
                            solver.max_inner = value.parse().map_err(|_| {
                                config_err(line_no, format!("bad integer `{value}`"))
                            })?
                        }
                        "runs" => {
                            solver.runs = value.parse().map_err(|_| {
                                config_err(line_no, format!("bad integer `{value}`"))
                            })?
                        }
                        other => {
                            return Err(config_err(line_no, format!("unknown solver key `{other}`")))
                        }
                    }
                }
            }
        }

        let problem = problem.ok_or_else(|| {
            HarnessError::Config("missing required `[problem]` section".into())
        })?;
        if problem.kind.is_empty() {
            return Err(HarnessError::Config("problem section needs `kind`".into()));
        }
        if solvers.is_empty() {
            return Err(HarnessError::Config(
                "at least one `[solver NAME]` section is required".into(),
            ));
        }
        let mut seen = HashMap::new();
        for solver in &solvers {
            if seen.insert(solver.name.clone(), ()).is_some() {
                return Err(HarnessError::Config(format!(
                    "duplicate solver name `{}`",
                    solver.name
                )));
            }
        }
        Ok(ExperimentConfig {
            problem,
            run,
            solvers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# comment
[problem]
kind = lasso
n = 100
zeta = 5e-3

[run]
budget = 300*(n+1)
seeds = 0 1 2
gap_tol = 1e-16

[solver zopn]
method = zopn
estimator = forward
hessian = bfgs
delta = 5e-10

[solver ss-proxgd]
method = proxgd
estimator = spherical:1
step = tune
delta = 5e-10
";

    #[test]
    fn parses_a_full_config() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.problem.kind, "lasso");
        assert_eq!(cfg.problem.n, Some(100));
        assert_eq!(cfg.run.budget.resolve(100), 300 * 101);
        assert_eq!(cfg.run.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.solvers.len(), 2);
        assert_eq!(cfg.solvers[0].name, "zopn");
        assert_eq!(cfg.solvers[1].method, Method::ProxGd);
        assert_eq!(
            cfg.solvers[1].estimator,
            GradEstimator::Spherical { samples: 1 }
        );
        assert_eq!(cfg.solvers[1].step, StepChoice::Tune);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "[problem]\nkind = lasso\nn = abc\n";
        let err = ExperimentConfig::parse(bad).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_missing_solvers() {
        let err = ExperimentConfig::parse("[problem]\nkind = lasso\nn = 10\n").unwrap_err();
        assert!(err.to_string().contains("solver"));
    }

    #[test]
    fn lasso_defaults_p_to_two_fifths_of_n() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        let spec = cfg.problem.problem_spec(None).unwrap();
        match spec.kind {
            ProblemKind::Lasso { n, p, .. } => {
                assert_eq!(n, 100);
                assert_eq!(p, 40);
            }
            other => panic!("unexpected kind {other:?}"),
        }
    }

    #[test]
    fn budget_forms() {
        assert_eq!(Budget::parse("1234", 1).unwrap(), Budget::Fixed(1234));
        assert_eq!(
            Budget::parse("300*(n+1)", 1).unwrap(),
            Budget::PerDimension(300)
        );
        assert!(Budget::parse("300*(n+2)", 1).is_err());
    }
}
