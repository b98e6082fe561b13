use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use trsqp::benchmarks::{logistic_from_data, make_logistic, saddle_start, FeatureLaw, Quadratic, Saddle, SyntheticLogisticSpec};
use trsqp::diagnostics::{run_checks, Fault, MODULES};
use trsqp::problem::{load_labeled_csv, GaussianNoiseSpec, GaussianNoisy, Problem};
use trsqp::report::{write_trajectory, RunSummary};
use trsqp::{run, Matrix, SolverConfig, Vector};

#[derive(Parser)]
#[command(name = "trsqp", version, about = "Stochastic trust-region SQP benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark over every (noise, seed) pair and write trajectories.
    Run(RunArgs),
    /// Run the self-check suite and print a pass/fail table.
    Check(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// saddle, quadratic, logistic-normal, logistic-exponential or csv:<path>
    #[arg(long, value_parser = ProblemKind::from_str)]
    problem: ProblemKind,
    /// 0 for first-order stationarity, 1 for second-order
    #[arg(long)]
    alpha: Option<u8>,
    /// Gaussian noise variances, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0")]
    noise: Vec<f64>,
    /// Seeds, comma separated
    #[arg(long, value_delimiter = ',', env = "TRSQP_SEED", default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    kkt_tol: Option<f64>,
    #[arg(long, value_enum)]
    hessian: Option<HessianFlag>,
    /// Output directory for trajectory CSVs and summary.json
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// key = value file applied before the flags above
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Equality constraints drawn for csv datasets
    #[arg(long, default_value_t = 5)]
    num_constraints: usize,
}

#[derive(Args)]
struct CheckArgs {
    /// Only run checks for this module
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(MODULES))]
    filter: Option<String>,
    #[arg(long, value_enum, hide = true, default_value = "none")]
    inject_fault: FaultFlag,
}

#[derive(Clone, Copy, ValueEnum)]
enum HessianFlag {
    Id,
    Sr1,
    Esth,
    Aveh,
}

impl HessianFlag {
    fn key(self) -> &'static str {
        match self {
            Self::Id => "id",
            Self::Sr1 => "sr1",
            Self::Esth => "esth",
            Self::Aveh => "aveh",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultFlag {
    None,
    PredSign,
}

#[derive(Clone, Debug)]
enum ProblemKind {
    Saddle,
    Quadratic,
    Logistic(FeatureLaw),
    Csv(PathBuf),
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "saddle" => Ok(Self::Saddle),
            "quadratic" => Ok(Self::Quadratic),
            "logistic-normal" => Ok(Self::Logistic(FeatureLaw::Normal)),
            "logistic-exponential" => Ok(Self::Logistic(FeatureLaw::Exponential)),
            _ => match s.strip_prefix("csv:") {
                Some(path) if !path.is_empty() => Ok(Self::Csv(PathBuf::from(path))),
                _ => Err(format!(
                    "unknown problem {s:?}; expected saddle, quadratic, logistic-normal, logistic-exponential or csv:<path>"
                )),
            },
        }
    }
}

impl ProblemKind {
    fn slug(&self) -> &'static str {
        match self {
            Self::Saddle => "saddle",
            Self::Quadratic => "quadratic",
            Self::Logistic(FeatureLaw::Normal) => "logistic-normal",
            Self::Logistic(FeatureLaw::Exponential) => "logistic-exponential",
            Self::Csv(_) => "csv",
        }
    }

    /// Finite-sum problems are sampled by subsampling records only.
    fn is_finite_sum(&self) -> bool {
        matches!(self, Self::Logistic(_) | Self::Csv(_))
    }
}

type DynProblem = Box<dyn Problem<f64>>;

fn noisy<P>(base: P, variance: f64) -> anyhow::Result<GaussianNoisy<P>> {
    Ok(GaussianNoisy::new(base, GaussianNoiseSpec::new(variance)?))
}

fn build(kind: &ProblemKind, data: Option<&(Matrix, Vector)>, m: usize, noise: f64, seed: u64) -> anyhow::Result<(DynProblem, Vector)> {
    Ok(match kind {
        ProblemKind::Saddle => (Box::new(noisy(Saddle, noise)?), saddle_start(seed)),
        ProblemKind::Quadratic => (Box::new(noisy(Quadratic, noise)?), Vector::from_column_slice(&[3.0, -2.0])),
        ProblemKind::Logistic(law) => {
            let spec = SyntheticLogisticSpec::new(*law);
            (Box::new(make_logistic(&spec, seed)?), Vector::zeros(spec.dim))
        }
        ProblemKind::Csv(_) => {
            let (features, labels) = data.context("dataset not loaded")?;
            let d = features.ncols();
            (Box::new(logistic_from_data(features.clone(), labels.clone(), m, seed)?), Vector::zeros(d))
        }
    })
}

fn solver_config(args: &RunArgs) -> anyhow::Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(alpha) = args.alpha {
        cfg.set("alpha", &alpha.to_string())?;
    }
    if let Some(n) = args.max_iters {
        cfg.max_iters = n;
    }
    if let Some(tol) = args.kkt_tol {
        cfg.kkt_tol = tol;
    }
    if let Some(h) = args.hessian {
        cfg.set("hessian", h.key())?;
    }
    for kv in &args.overrides {
        let (key, value) = kv.split_once('=').with_context(|| format!("expected KEY=VALUE, got {kv:?}"))?;
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn trajectory_path(dir: &Path, kind: &ProblemKind, noise: f64, seed: u64) -> PathBuf {
    dir.join(format!("{}_noise{noise:e}_seed{seed}.csv", kind.slug()))
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    if args.noise.is_empty() || args.seeds.is_empty() {
        bail!("noise and seed lists must be nonempty");
    }
    if args.problem.is_finite_sum() && args.noise.iter().any(|&v| v != 0.0) {
        bail!("{} is sampled by subsampling records; pass --noise 0", args.problem.slug());
    }
    let cfg = solver_config(&args)?;
    let data = match &args.problem {
        ProblemKind::Csv(path) => Some(load_labeled_csv::<f64>(path).with_context(|| format!("loading {}", path.display()))?),
        _ => None,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let jobs: Vec<(f64, u64)> = args.noise.iter().flat_map(|&v| args.seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(noise, seed)| -> anyhow::Result<_> {
            let (problem, x0) = build(&args.problem, data.as_ref(), args.num_constraints, noise, seed)?;
            let cfg = SolverConfig { seed, ..cfg.clone() };
            let start = Instant::now();
            let res = run(problem.as_ref(), x0, &cfg).with_context(|| format!("noise {noise:e}, seed {seed}"))?;
            Ok((noise, seed, res, start.elapsed().as_secs_f64()))
        })
        .collect();

    let alpha = i32::from(cfg.stationarity() == trsqp::Stationarity::Second);
    let mut summaries = Vec::new();
    println!("{:>10} {:>6} {:>7} {:>10} {:>10} {:>10}  stop", "noise", "seed", "iters", "kkt_est", "kkt_true", "tau_true");
    for r in results {
        let (noise, seed, res, wall) = r?;
        let path = trajectory_path(&args.out, &args.problem, noise, seed);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_trajectory(BufWriter::new(file), &res.trajectory)?;
        let summary = RunSummary::from_run(args.problem.slug(), noise, alpha, cfg.hessian.name(), &res, wall);
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
        println!(
            "{noise:>10.1e} {seed:>6} {:>7} {:>10} {:>10} {:>10}  {:?}",
            summary.iterations,
            show(summary.final_kkt_est),
            show(summary.final_kkt_true),
            show(summary.final_tau_true),
            summary.stop
        );
        summaries.push(summary);
    }
    let path = args.out.join("summary.json");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &summaries)?;
    Ok(())
}

fn cmd_check(args: CheckArgs) -> bool {
    let fault = match args.inject_fault {
        FaultFlag::None => Fault::None,
        FaultFlag::PredSign => Fault::PredCurvatureSign,
    };
    let results = run_checks(args.filter.as_deref(), fault);
    let mut ok = true;
    for r in &results {
        println!("{:<4} {:<10} {:<28} {}", if r.passed { "ok" } else { "FAIL" }, r.module, r.name, r.detail);
        ok &= r.passed;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    ok
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match cli.command {
        Command::Run(args) => match cmd_run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
        Command::Check(args) => {
            if cmd_check(args) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
