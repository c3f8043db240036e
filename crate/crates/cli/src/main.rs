//! `rome`: reconcile hierarchical forecasts, run the simulation studies,
//! score forecasts and time the reconcilers.
//!
//! Exit codes: 0 success, 2 invalid input or flags, 3 numerical failure.

mod bench;
mod evaluate;
mod manifest;
mod reconcile;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

#[derive(Parser)]
#[command(
    name = "rome",
    version,
    about = "Robust reconciliation of hierarchical forecasts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconcile base forecasts read from CSV.
    Reconcile(ReconcileArgs),
    /// Run a seeded simulation study and write its report.
    Simulate(SimulateArgs),
    /// RMSE of forecasts against actuals by series group and window.
    Evaluate(EvaluateArgs),
    /// Time every reconciler on one simulated instance.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Bu,
    Mint,
    Rome,
    Combine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Zero,
    Mint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args)]
pub struct ReconcileArgs {
    /// Hierarchy JSON file.
    #[arg(long)]
    hierarchy: PathBuf,
    /// Base forecasts, one row per series in hierarchy order.
    #[arg(long)]
    forecasts: PathBuf,
    /// In-sample residuals, one row per series; required by wlsv, sample and
    /// shrink and by data-driven loss scales.
    #[arg(long)]
    residuals: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rome")]
    method: MethodArg,
    /// ls, lad, huber, lp or quantile. Required for `--method rome`.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, default_value = "ols")]
    cov: String,
    #[arg(long)]
    shrink_lambda: Option<f64>,
    /// Scalar on W; any positive value gives the same reconciliation.
    #[arg(long, default_value_t = 1.0)]
    kh: f64,
    /// Huber threshold on the standardized scale; derived from residuals when absent.
    #[arg(long)]
    huber_k: Option<f64>,
    /// Residual scale for Huber and LAD; derived from residuals when absent.
    #[arg(long)]
    sigma_hat: Option<f64>,
    #[arg(long)]
    lp_p: Option<f64>,
    #[arg(long)]
    quantile_q: Option<f64>,
    /// Combination pattern for `--method combine`: average, one-way or two-way.
    #[arg(long, default_value = "average")]
    pattern: String,
    #[arg(long, value_enum, default_value = "zero")]
    init: InitArg,
    /// huber-approx or perturbation.
    #[arg(long, default_value = "huber-approx")]
    lad_mode: String,
    #[arg(long, default_value_t = 1e-8)]
    varsigma: f64,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Reconciled forecasts CSV; sidecars are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// nongaussian, efficiency, proportion, correlation or complexity.
    #[arg(long)]
    design: String,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated method families: bu, ls, lad, huber, combine.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Comma-separated covariance designs; defaults to the design's own set.
    #[arg(long, value_delimiter = ',')]
    covs: Option<Vec<String>>,
    /// Restrict the non-Gaussian design to these error distributions.
    #[arg(long, value_delimiter = ',')]
    distribution: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    n_bottom: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    proportion: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "1,6,12")]
    windows: Vec<usize>,
    #[arg(long, default_value = "huber-approx")]
    lad_mode: String,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    forecasts: PathBuf,
    #[arg(long)]
    actuals: PathBuf,
    #[arg(long)]
    hierarchy: PathBuf,
    /// Benchmark forecasts; adds percentage changes against them.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,6,12")]
    windows: Vec<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Middle-level group sizes of the benchmark tree.
    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    groups: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<rome_core::Error> for CliError {
    fn from(e: rome_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Parses a flag value through its `FromStr`, naming the flag on failure.
pub fn parse_flag<T>(flag: &str, value: &str) -> CliResult<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| invalid(format!("--{flag} {value:?}: {e}")))
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("ROME_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        invalid(format!(
            "ROME_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| invalid(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Reconcile(args) => reconcile::run(&args),
        Command::Simulate(args) => simulate::run(&args),
        Command::Evaluate(args) => evaluate::run(&args),
        Command::Bench(args) => bench::run(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
