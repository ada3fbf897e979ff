//! Thin command-line front end over the library harness.
//!
//! Exit codes: 0 on success, 2 on usage/configuration errors, 3 on solver
//! failures.

use std::fs::File;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quantcc::harness::{
    run_beta_sweep, run_gapcheck, run_plan, solve_instance, sweep_objectives, write_gaps_csv,
    write_plan_metadata, write_reports_csv, ExampleId, ExperimentPlan, Method, SolverSettings,
};
use quantcc::Error;

#[derive(Parser)]
#[command(
    name = "quantcc",
    about = "Chance-constrained optimization benchmarks via empirical quantile estimation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one benchmark instance and print its report row.
    Solve(SolveArgs),
    /// Run an experiment grid and write a CSV (plus a .meta.json companion).
    Bench(BenchArgs),
    /// Portfolio optimality gaps against the convex-reformulation oracle.
    Gapcheck(GapArgs),
    /// Objective-vs-step-size sweep for the finite-difference estimator.
    SweepBeta(SweepArgs),
}

/// Options shared by all subcommands; flags override config-file values.
#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat key=value config file applied before any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Risk level of the chance constraint.
    #[arg(long)]
    alpha: Option<f64>,
    /// Scenario batch size N for the solver.
    #[arg(long = "samples", alias = "N")]
    n_samples: Option<usize>,
    /// Finite-difference step size.
    #[arg(long)]
    beta: Option<f64>,
    /// Smoothing bandwidth (0 = adaptive).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Out-of-sample validation size.
    #[arg(long)]
    n_val: Option<usize>,
    /// Joint-chance level U. The published experiments leave this value
    /// unstated; 100 is this crate's documented default.
    #[arg(long)]
    big_u: Option<f64>,
    /// Joint-chance row count m.
    #[arg(long)]
    joint_m: Option<usize>,
    /// Extra key=value overrides for any config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonArgs {
    fn settings(&self) -> Result<SolverSettings, Error> {
        let mut settings = match &self.config {
            Some(path) => SolverSettings::from_file(path)?,
            None => SolverSettings::default(),
        };
        if let Some(alpha) = self.alpha {
            settings.alpha = alpha;
        }
        if let Some(n) = self.n_samples {
            settings.n_samples = n;
        }
        if let Some(beta) = self.beta {
            settings.beta = beta;
        }
        if let Some(eps) = self.epsilon {
            settings.epsilon_smoothing = eps;
        }
        if let Some(n_val) = self.n_val {
            settings.n_val = n_val;
        }
        if let Some(u) = self.big_u {
            settings.big_u = u;
        }
        if let Some(m) = self.joint_m {
            settings.joint_m = m;
        }
        for pair in &self.set {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{pair}'"))
            })?;
            settings.set(key.trim(), value.trim())?;
        }
        validate_settings(&settings)?;
        Ok(settings)
    }
}

fn validate_settings(settings: &SolverSettings) -> Result<(), Error> {
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0,1), got {}",
            settings.alpha
        )));
    }
    if settings.n_samples < 1 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    Ok(())
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Benchmark family: nonconvex1d, portfolio, or joint-chance.
    #[arg(long)]
    example: String,
    /// Benchmark dimension (assets / coordinates; nonconvex1d is always 1).
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Gradient estimator: fd or smoothing.
    #[arg(long, default_value = "fd")]
    method: String,
    /// Master seed; reruns with the same seed reproduce the row bit for bit
    /// (except wall time).
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated benchmark families.
    #[arg(long, value_delimiter = ',', required = true)]
    examples: Vec<String>,
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', default_value = "50")]
    dims: Vec<usize>,
    /// Comma-separated risk levels.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    alphas: Vec<f64>,
    /// Comma-separated batch sizes.
    #[arg(long = "sample-sizes", value_delimiter = ',', default_value = "10000")]
    sample_sizes: Vec<usize>,
    /// Comma-separated finite-difference steps.
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    betas: Vec<f64>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "fd")]
    methods: Vec<String>,
    /// Replications per cell (median-friendly odd counts recommended).
    #[arg(long, default_value_t = 3)]
    replications: usize,
    /// Master seed for the whole grid.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV path.
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct GapArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated portfolio dimensions.
    #[arg(long, value_delimiter = ',', default_value = "50,100")]
    dims: Vec<usize>,
    /// Comma-separated risk levels.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15")]
    alphas: Vec<f64>,
    /// Gradient estimator.
    #[arg(long, default_value = "fd")]
    method: String,
    /// Replications per cell (median objective reported).
    #[arg(long, default_value_t = 1)]
    replications: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Benchmark family.
    #[arg(long, default_value = "portfolio")]
    example: String,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    /// Comma-separated batch sizes.
    #[arg(long = "sample-sizes", value_delimiter = ',', default_value = "5000,10000")]
    sample_sizes: Vec<usize>,
    /// Comma-separated finite-difference steps.
    #[arg(long, value_delimiter = ',', default_value = "0.0001,0.0005,0.001,0.005,0.01")]
    betas: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Solve(args) => {
            let settings = args.common.settings()?;
            let example: ExampleId = args.example.parse()?;
            let method: Method = args.method.parse()?;
            let report = solve_instance(example, args.dim, &settings, method, args.seed)?;
            write_reports_csv(&[report], io::stdout())?;
            Ok(())
        }
        Command::Bench(args) => {
            let settings = args.common.settings()?;
            let plan = ExperimentPlan {
                examples: args
                    .examples
                    .iter()
                    .map(|e| e.parse())
                    .collect::<Result<_, _>>()?,
                dims: args.dims,
                alphas: args.alphas,
                sample_sizes: args.sample_sizes,
                betas: args.betas,
                methods: args
                    .methods
                    .iter()
                    .map(|m| m.parse())
                    .collect::<Result<_, _>>()?,
                replications: args.replications,
                master_seed: args.seed,
            };
            plan.validate()?;
            let rows = run_plan(&plan, &settings)?;
            write_reports_csv(&rows, File::create(&args.out)?)?;
            write_plan_metadata(&args.out, &plan, &settings)?;
            eprintln!("wrote {} rows to {}", rows.len(), args.out.display());
            Ok(())
        }
        Command::Gapcheck(args) => {
            let settings = args.common.settings()?;
            let method: Method = args.method.parse()?;
            let rows = run_gapcheck(
                &args.dims,
                &args.alphas,
                &settings,
                method,
                args.seed,
                args.replications,
            )?;
            match args.out {
                Some(path) => write_gaps_csv(&rows, File::create(path)?)?,
                None => write_gaps_csv(&rows, io::stdout())?,
            }
            Ok(())
        }
        Command::SweepBeta(args) => {
            let settings = args.common.settings()?;
            let example: ExampleId = args.example.parse()?;
            let rows = run_beta_sweep(
                example,
                args.dim,
                &args.sample_sizes,
                &args.betas,
                &settings,
                args.seed,
            )?;
            match args.out {
                Some(path) => write_reports_csv(&rows, File::create(path)?)?,
                None => write_reports_csv(&rows, io::stdout())?,
            }
            for (n, pairs) in sweep_objectives(&rows) {
                let summary: Vec<String> =
                    pairs.iter().map(|(b, o)| format!("beta={b}: {o:.4}")).collect();
                eprintln!("N={n}: {}", summary.join("  "));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ (Error::InvalidArgument(_) | Error::Config(_))) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(3)
        }
    }
}
