//! `l0flow` command line.
//!
//! Exit codes: 0 success (certified), 1 usage or data error, 2 horizon reached
//! without convergence, 3 numerical divergence.

mod check;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use l0flow::bench::{self, ExperimentConfig, ExperimentKind, ExperimentReport, ParamOverrides, Scale, StartPoint};
use l0flow::problem::{LoadedProblem, ProblemFile};
use l0flow::{
    halves, recombine_clean, solve_and_correct, solve_and_correct_split, write_trajectory_csv, Certificate, DynamicsParams, Error,
    ScheduleKind, SolveOptions,
};
use log::info;
use serde::Serialize;

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_HORIZON: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "l0flow", version, about = "Smoothed projection dynamics for L0-penalized box-constrained regression")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a problem file and print the report.
    Solve(SolveArgs),
    /// Run a seeded experiment and print a per-seed table with the aggregate.
    Bench(BenchArgs),
    /// Run the fast invariant checks (smoothing, projection, partition).
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    PowerLaw,
    Exponential,
}

impl From<ScheduleArg> for ScheduleKind {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::PowerLaw => ScheduleKind::PowerLaw,
            ScheduleArg::Exponential => ScheduleKind::Exponential,
        }
    }
}

/// Overrides of the dynamics defaults.
#[derive(Debug, Args)]
struct Overrides {
    /// Time scale γ of the flow.
    #[arg(long)]
    gamma: Option<f64>,
    /// Initial smoothing level α₀.
    #[arg(long)]
    alpha0: Option<f64>,
    /// Decay rate β of the smoothing schedule.
    #[arg(long)]
    beta: Option<f64>,
    /// Limit smoothing parameter μ* (checked against the admissibility bound).
    #[arg(long = "mu-star")]
    mu_star: Option<f64>,
    /// RK4 step size h.
    #[arg(long)]
    step: Option<f64>,
    /// Integration horizon T.
    #[arg(long)]
    horizon: Option<f64>,
    /// Stationarity residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Smoothing schedule.
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
}

impl Overrides {
    fn to_params(&self) -> ParamOverrides {
        ParamOverrides {
            gamma: self.gamma,
            alpha0: self.alpha0,
            beta: self.beta,
            mu_star: self.mu_star,
            step: self.step,
            horizon: self.horizon,
            residual_tol: self.tol,
            schedule: self.schedule.map(Into::into),
        }
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Problem JSON: {"A": [[..]], "b": [..], "lambda": .., "upper": .., "lower"?: .., "x0"?: [..]}
    problem: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write trajectory samples (t, objective_smooth, residual, mu) as CSV.
    #[arg(long)]
    traj: Option<PathBuf>,
    /// Keep every n-th step in the trajectory.
    #[arg(long, default_value_t = 10)]
    traj_stride: usize,
    /// Print the JSON report on stdout instead of the summary.
    #[arg(long)]
    json: bool,
    /// Print the effective dynamics parameters for the problem and exit.
    #[arg(long)]
    defaults: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Experiment: test-example, cs, vs or prostate.
    kind: String,
    /// Number of seeds (runs seeds 0..N).
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long, value_enum, default_value = "desk")]
    scale: ScaleArg,
    /// Reuse one generated instance; seeds then only vary the random start.
    #[arg(long)]
    instance_seed: Option<u64>,
    /// Uniform random starts on [0, min(upper, SCALE)] instead of the default start.
    #[arg(long, value_name = "SCALE")]
    random_start: Option<f64>,
    /// Signal length n.
    #[arg(long)]
    n: Option<usize>,
    /// Number of measurements m.
    #[arg(long)]
    m: Option<usize>,
    /// Nonzeros in the planted signal.
    #[arg(long)]
    sparsity: Option<usize>,
    /// Prostate CSV path.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON report on stdout instead of the table.
    #[arg(long)]
    json: bool,
    /// Print the experiment configuration and exit.
    #[arg(long)]
    defaults: bool,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Machine-readable results.
    #[arg(long)]
    json: bool,
    /// Corrupt one check on purpose (exercises the failure path).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => EXIT_DIVERGED,
            _ => EXIT_ERROR,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage_error(message: String) -> Failure {
    let usage = Cli::command().render_usage();
    Failure {
        code: EXIT_ERROR,
        message: format!("{message}\n\n{usage}"),
    }
}

#[derive(Debug, Serialize)]
struct SolveOutput {
    certificate: Certificate,
    /// Final point in the coordinates of the problem file.
    x: Vec<f64>,
    support: Vec<usize>,
    objective: f64,
    objective_smooth: f64,
    final_t: f64,
    final_residual: f64,
    iterations: usize,
    corrected: bool,
    merit_violations: usize,
    /// Largest overlap `min(x₊, x₋)` removed when recombining a split problem.
    #[serde(skip_serializing_if = "Option::is_none")]
    split_overlap: Option<f64>,
    params: DynamicsParams,
    grad_bound: f64,
}

fn write_json<T: Serialize>(value: &T, path: &PathBuf) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn cmd_solve(args: &SolveArgs) -> Result<u8, Failure> {
    let file = ProblemFile::read(&args.problem).map_err(|e| Failure {
        code: EXIT_ERROR,
        message: format!("{}: {e}", args.problem.display()),
    })?;
    let problem = file.into_problem()?;
    let spec = problem.solver_spec();
    let mut params = DynamicsParams::for_problem(spec);
    args.overrides.to_params().apply(&mut params);
    params.validate(spec)?;
    if args.defaults {
        println!("{}", serde_json::to_string_pretty(&params)?);
        return Ok(EXIT_OK);
    }

    let x0 = match (&problem, file.x0()) {
        (_, Some(x)) if x.len() != problem.dim() => {
            return Err(Failure {
                code: EXIT_ERROR,
                message: format!("field \"x0\": expected {} entries, got {}", problem.dim(), x.len()),
            })
        }
        (LoadedProblem::TwoSided { original, .. }, Some(y)) => original.lift(&y)?,
        (LoadedProblem::OneSided(_), Some(x)) => x,
        (_, None) => bench::start_point(spec, StartPoint::Ones, 0),
    };
    let stride = if args.traj.is_some() { args.traj_stride.max(1) } else { 0 };
    let opts = SolveOptions { sample_stride: stride };
    let report = match &problem {
        LoadedProblem::OneSided(_) => solve_and_correct(spec, &params, &x0, &opts)?,
        LoadedProblem::TwoSided { original, .. } => solve_and_correct_split(original, spec, &params, &x0, &opts)?,
    };
    info!("finished at t = {} after {} steps", report.final_t, report.iterations);

    if let Some(path) = &args.traj {
        write_trajectory_csv(&report.trajectory_samples, BufWriter::new(File::create(path)?))?;
    }

    let (x, overlap) = match &problem {
        LoadedProblem::OneSided(_) => (report.final_x.clone(), None),
        LoadedProblem::TwoSided { .. } => {
            let (p, m) = halves(&report.final_x)?;
            let r = recombine_clean(&p, &m, params.num_zero_tol())?;
            (r.y, Some(r.max_overlap))
        }
    };
    let support = l0flow::support_of(&x, params.num_zero_tol());
    let out = SolveOutput {
        certificate: report.certificate,
        x: x.iter().copied().collect(),
        support,
        objective: report.objective_true,
        objective_smooth: report.objective_smooth,
        final_t: report.final_t,
        final_residual: report.final_residual,
        iterations: report.iterations,
        corrected: report.corrected,
        merit_violations: report.merit_violations,
        split_overlap: overlap,
        params,
        grad_bound: spec.grad_bound,
    };

    if let Some(path) = &args.out {
        write_json(&out, path)?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("certificate  {:?}", out.certificate);
        println!("x            {}", fmt_vec(&out.x));
        println!("support      {:?}", out.support);
        println!("objective    {:.10}", out.objective);
        println!("t            {} ({} steps, corrected: {})", out.final_t, out.iterations, out.corrected);
        println!("residual     {:.3e}", out.final_residual);
    }
    Ok(match out.certificate {
        Certificate::CertifiedLocalMin => EXIT_OK,
        Certificate::MaxHorizon | Certificate::NeedsCorrection => EXIT_HORIZON,
    })
}

fn bench_config(args: &BenchArgs) -> Result<ExperimentConfig, Failure> {
    let kind: ExperimentKind = args.kind.parse().map_err(|e: Error| usage_error(e.to_string()))?;
    let mut cfg = ExperimentConfig::defaults(kind, args.scale.into());
    if let Some(n) = args.seeds {
        cfg.seeds = (0..n).collect();
    }
    cfg.instance_seed = args.instance_seed.or(cfg.instance_seed);
    if let Some(scale) = args.random_start {
        cfg.start = StartPoint::Random { scale };
    }
    cfg.n = args.n.unwrap_or(cfg.n);
    cfg.m = args.m.unwrap_or(cfg.m);
    cfg.sparsity = args.sparsity.unwrap_or(cfg.sparsity);
    if args.data.is_some() {
        cfg.data_path = args.data.clone();
    }
    cfg.overrides = args.overrides.to_params();
    Ok(cfg)
}

fn print_table(report: &ExperimentReport) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
    println!("{:>6}  {:>11}  {:>4}  {:>9}  {:>12}  {:>20}  {:>9}", "seed", "mse", "|S|", "recovered", "objective", "certificate", "ms");
    for r in &report.per_seed {
        if let Some(e) = &r.error {
            println!("{:>6}  error: {e}", r.seed);
            continue;
        }
        let recovered = r.support_recovered.map_or("-".to_string(), |b| b.to_string());
        let cert = r.certificate.map_or("-".to_string(), |c| format!("{c:?}"));
        println!(
            "{:>6}  {:>11}  {:>4}  {:>9}  {:>12}  {:>20}  {:>9.1}",
            r.seed,
            opt(r.mse),
            r.support.len(),
            recovered,
            r.objective.map_or("-".to_string(), |v| format!("{v:.6}")),
            cert,
            r.wall_ms
        );
    }
    let a = &report.aggregate;
    println!(
        "aggregate  mse mean {} max {} min {}  |  ms mean {:.1} max {:.1} min {:.1}  |  failures {}",
        opt(a.mean_mse),
        opt(a.max_mse),
        opt(a.min_mse),
        a.mean_ms,
        a.max_ms,
        a.min_ms,
        a.failures
    );
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, Failure> {
    let cfg = bench_config(args)?;
    if args.defaults {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(EXIT_OK);
    }
    let report = bench::run_experiment(&cfg)?;
    if let Some(path) = &args.out {
        write_json(&report, path)?;
    }
    if args.json {
        println!("{}", report.to_json()?);
    } else {
        print_table(&report);
    }
    Ok(if report.aggregate.failures > 0 { EXIT_ERROR } else { EXIT_OK })
}

fn cmd_check(args: &CheckArgs) -> Result<u8, Failure> {
    let results = check::run_all(args.inject_fault);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&results)?);
    } else {
        for r in &results {
            println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        }
    }
    Ok(if results.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_ERROR })
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
        }
    };
    init_logging(cli.verbose);
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
