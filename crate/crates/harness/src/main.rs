use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use zopn_core::baselines::{proxgd_solve, tune_step};
use zopn_core::solver::{zopn_solve, ExternalStop};

use zopn_harness::config::{ExperimentConfig, Method, StepChoice};
use zopn_harness::emit::{csv_rows, write_run_csv};
use zopn_harness::runner::{
    self, run_benchmark, run_superlinear, write_curvature_csv, OutputFormat,
};
use zopn_harness::HarnessError;

#[derive(Parser)]
#[command(
    name = "zopn",
    about = "Derivative-free composite optimization experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Experiment configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` from the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Oracle budget override (fixed call count)
    #[arg(long)]
    budget: Option<u64>,
    /// Artifacts to write
    #[arg(long, default_value = "both")]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver from the config on the configured problem
    Solve {
        #[command(flatten)]
        common: CommonOpts,
        /// Solver section to run (defaults to the first)
        #[arg(long)]
        solver: Option<String>,
        /// Seed for stochastic estimators
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full multi-solver, multi-seed comparison
    Bench {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the local superlinear-convergence protocol
    Superlinear {
        /// Problem dimension (10, 20, or 50)
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Seeds, comma separated
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "out/superlinear")]
        out: PathBuf,
        #[arg(long, default_value = "both")]
        format: String,
    },
    /// Measure curvature-condition failure rates against the sample bounds
    Curvature {
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out/curvature")]
        out: PathBuf,
    },
    /// Tune a baseline's constant step over the power-of-two grid
    Tune {
        #[arg(long)]
        config: PathBuf,
        /// Solver section to tune (defaults to the first proxgd section)
        #[arg(long)]
        solver: Option<String>,
    },
}

fn load_config(common: &CommonOpts) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let text = fs::read_to_string(&common.config)?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(budget) = common.budget {
        cfg.run.budget = zopn_harness::config::Budget::Fixed(budget);
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.run.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn cmd_solve(
    common: &CommonOpts,
    solver: Option<&str>,
    seed: u64,
) -> Result<(), HarnessError> {
    let (cfg, out) = load_config(common)?;
    let format = OutputFormat::parse(&common.format)?;
    let section = match solver {
        Some(name) => cfg
            .solvers
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| HarnessError::Config(format!("no solver section named `{name}`")))?,
        None => &cfg.solvers[0],
    };
    let (problem, _, f_star) = runner::prepare_problem(&cfg)?;
    let n = problem.dimension();
    let budget = cfg.run.budget.resolve(n);
    let mut instance = problem.clone();
    let x0 = DVector::zeros(n);
    let stop = ExternalStop::gap(f_star, cfg.run.gap_tol);

    let report = match section.method {
        Method::Zopn => {
            let mut solver_cfg = runner::zopn_config_from(section, n, budget);
            solver_cfg.seed = seed;
            solver_cfg.stop = Some(stop);
            zopn_solve(&mut instance, x0, &solver_cfg)?
        }
        Method::ProxGd => {
            let step = match section.step {
                StepChoice::Fixed(s) => s,
                StepChoice::Tune => {
                    let template = runner::zopn_config_from(section, n, budget);
                    let _ = template;
                    let mut tune_cfg = zopn_core::baselines::ProxGdConfig::new(
                        section.estimator.clone(),
                        1.0,
                        section.schedule.radius_at(0),
                        budget,
                    );
                    tune_cfg.runs = section.runs;
                    let (best, _) = tune_step(&problem, &tune_cfg)?;
                    best
                }
            };
            let mut run_cfg = zopn_core::baselines::ProxGdConfig::new(
                section.estimator.clone(),
                step,
                section.schedule.radius_at(0),
                budget,
            );
            run_cfg.seed = seed;
            run_cfg.runs = section.runs;
            run_cfg.stop = Some(stop);
            proxgd_solve(&mut instance, x0, &run_cfg)?
        }
    };

    fs::create_dir_all(&out)?;
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        let rows = csv_rows(&report, f_star);
        write_run_csv(&out.join(format!("{}_seed{}.csv", section.name, seed)), &rows)?;
    }
    println!(
        "{}: stop={:?} nf={} F={:e} gap={:e}",
        section.name,
        report.stop_reason,
        report.counter.total(),
        report.f_final,
        report.f_final - f_star
    );
    Ok(())
}

fn cmd_bench(common: &CommonOpts) -> Result<(), HarnessError> {
    let (cfg, out) = load_config(common)?;
    let format = OutputFormat::parse(&common.format)?;
    let artifacts = run_benchmark(&cfg, &out, format)?;
    println!("F* = {:e}", artifacts.f_star);
    for solver in &artifacts.solvers {
        let best_gap = solver
            .runs
            .iter()
            .map(|r| r.gap_final)
            .fold(f64::INFINITY, f64::min);
        match solver.tuned_step {
            Some(step) => println!(
                "{}: tuned step {:e}, best final gap {:e} over {} seed(s)",
                solver.name,
                step,
                best_gap,
                solver.runs.len()
            ),
            None => println!(
                "{}: best final gap {:e} over {} seed(s)",
                solver.name,
                best_gap,
                solver.runs.len()
            ),
        }
    }
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn cmd_superlinear(
    n: usize,
    seeds: &[u64],
    out: &PathBuf,
    format: &str,
) -> Result<(), HarnessError> {
    let format = OutputFormat::parse(format)?;
    let runs = run_superlinear(n, seeds, out, format)?;
    for run in &runs {
        let last = run.rows.last().expect("at least the initial row");
        println!(
            "{} seed {}: reached eps {:e} at k = {} (nf = {}), {} cubic-radius violations",
            run.variant,
            run.seed,
            last.eps,
            last.k,
            last.nf,
            run.report.radius_rule_violations
        );
    }
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn cmd_curvature(trials: usize, seed: u64, out: &PathBuf) -> Result<(), HarnessError> {
    let report = runner::run_curvature_lab(trials, seed);
    fs::create_dir_all(out)?;
    write_curvature_csv(&out.join("curvature.csv"), &report)?;
    println!(
        "forward difference: radius bound {:e}, curvature rate {}",
        report.fd_radius, report.fd_rate
    );
    println!(
        "gaussian: N = {}, failure rate {:.4}, growth exponent {:.3}",
        report.gaussian_samples, report.gaussian_rate, report.gaussian_growth_exponent
    );
    println!(
        "spherical: N = {}, failure rate {:.4}, growth exponent {:.3}",
        report.spherical_samples, report.spherical_rate, report.spherical_growth_exponent
    );
    Ok(())
}

fn cmd_tune(config: &PathBuf, solver: Option<&str>) -> Result<(), HarnessError> {
    let text = fs::read_to_string(config)?;
    let cfg = ExperimentConfig::parse(&text)?;
    let section = match solver {
        Some(name) => cfg
            .solvers
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| HarnessError::Config(format!("no solver section named `{name}`")))?,
        None => cfg
            .solvers
            .iter()
            .find(|s| s.method == Method::ProxGd)
            .ok_or_else(|| {
                HarnessError::Config("no proxgd solver section to tune".into())
            })?,
    };
    if section.method != Method::ProxGd {
        return Err(HarnessError::Config(format!(
            "solver `{}` is not a proxgd baseline",
            section.name
        )));
    }
    let (problem, _, _) = runner::prepare_problem(&cfg)?;
    let budget = cfg.run.budget.resolve(problem.dimension());
    let mut template = zopn_core::baselines::ProxGdConfig::new(
        section.estimator.clone(),
        1.0,
        section.schedule.radius_at(0),
        budget,
    );
    template.runs = section.runs;
    let (best, table) = tune_step(&problem, &template)?;
    println!("step,mean_final_F");
    for (step, value) in &table {
        println!("{:e},{:e}", step, value);
    }
    println!("best step: {:e}", best);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve {
            common,
            solver,
            seed,
        } => cmd_solve(common, solver.as_deref(), *seed),
        Command::Bench { common } => cmd_bench(common),
        Command::Superlinear {
            n,
            seeds,
            out,
            format,
        } => cmd_superlinear(*n, seeds, out, format),
        Command::Curvature { trials, seed, out } => cmd_curvature(*trials, *seed, out),
        Command::Tune { config, solver } => cmd_tune(config, solver.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
