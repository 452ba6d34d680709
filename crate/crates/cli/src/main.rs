//! Command-line front end: ingest, smooth, fit, forecast, simulate, e0,
//! evaluate and a self-contained demo.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mortcast::error::{Error, ErrorClass};
use mortcast::lifetable::InfantRule;

#[derive(Debug, Parser)]
#[command(name = "mortcast", version, about = "Coherent mortality and life-expectancy forecasts for groups of populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert HMD rate and exposure tables to the canonical CSV.
    Ingest(IngestArgs),
    /// Smooth every year of every population.
    Smooth(SmoothArgs),
    /// Write the multilevel decomposition of each group.
    Fit(FitArgs),
    /// Point forecasts of log death rates.
    Forecast(ForecastArgs),
    /// Posterior simulation and percentile intervals for the multilevel model.
    Simulate(SimulateArgs),
    /// Life expectancy at birth from a forecast file.
    E0(E0Args),
    /// Rolling-origin backtest driven by a TOML run config.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic two-sex dataset and run the whole pipeline on it.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// `NAME[:REGION]=RATES_FILE,EXPOSURES_FILE`; repeat for several sources.
    #[arg(long = "source", required = true)]
    sources: Vec<String>,
    /// Ages at and above this are pooled into an open group.
    #[arg(long, default_value_t = 110)]
    age_cap: u32,
    #[arg(long)]
    from: Option<i32>,
    #[arg(long)]
    to: Option<i32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Canonical long-format CSV.
    #[arg(long)]
    input: PathBuf,
    /// TOML grouping of the populations (defaults to one group per name).
    #[arg(long)]
    hierarchy: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SmoothingArgs {
    /// Penalty weight, or `auto` for cross-validation.
    #[arg(long, default_value = "auto")]
    alpha: String,
    /// Age from which fitted curves are non-decreasing; `none` to disable.
    #[arg(long, default_value = "65")]
    monotone_from: String,
    /// Use the observed log rates as they are.
    #[arg(long)]
    raw: bool,
}

#[derive(Debug, Args)]
struct SmoothArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Variance share retained by the common decomposition.
    #[arg(long, default_value_t = 0.9)]
    p1: f64,
    /// Variance share retained by each population-specific decomposition.
    #[arg(long, default_value_t = 0.9)]
    p2: f64,
    /// How score series are forecast: arima, rwf, ar1 or arfima.
    #[arg(long, default_value = "arima")]
    score_model: String,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[arg(long, default_value = "multilevel")]
    method: String,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// Registered method name, repeatable; `benchmark` runs the six standard rows.
    #[arg(long = "method", default_value = "multilevel_fdm")]
    methods: Vec<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write male-minus-female log-rate gaps for plotting.
    #[arg(long)]
    sex_gap: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 20_000)]
    draws: usize,
    #[arg(long, default_value_t = 10_000)]
    burn: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    #[arg(long, default_value_t = 2)]
    chains: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    /// Fit score models once instead of on every retained draw.
    #[arg(long)]
    no_refit: bool,
    #[arg(long, value_enum, default_value_t = Infant::CoaleDemeny)]
    infant: Infant,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Infant {
    CoaleDemeny,
    Half,
}

impl From<Infant> for InfantRule {
    fn from(v: Infant) -> Self {
        match v {
            Infant::CoaleDemeny => InfantRule::CoaleDemeny,
            Infant::Half => InfantRule::Half,
        }
    }
}

#[derive(Debug, Args)]
struct E0Args {
    /// Forecast CSV as written by `forecast`.
    #[arg(long)]
    input: PathBuf,
    /// Method to use when the file holds several.
    #[arg(long)]
    method: Option<String>,
    /// Log-rate interval CSV as written by `simulate`; its bounds are mapped
    /// through the life table.
    #[arg(long)]
    intervals: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Infant::CoaleDemeny)]
    infant: Infant,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// TOML run config.
    #[arg(long)]
    plan: PathBuf,
    /// Report CSV (defaults to `report.csv` in the config's output directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Horizon-averaged summary table (defaults to `summary.csv` next to the report).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Years held out in the backtest.
    #[arg(long, default_value_t = 10)]
    holdout: usize,
    /// Retained posterior paths per chain in the simulation step.
    #[arg(long, default_value_t = 100)]
    paths: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn report(e: &Error) {
    let class = match e.class() {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
    };
    let line = serde_json::json!({ "error": { "class": class, "kind": e.kind(), "message": e.to_string() } });
    eprintln!("{line}");
}

/// Sizes the worker pool from `MORTCAST_THREADS` when set.
fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("MORTCAST_THREADS") else { return Ok(()) };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("MORTCAST_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|()| commands::run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
