//! `gpvar`: estimation, forecasting, impulse responses and verification runs
//! for Gaussian-process VARs with stochastic volatility.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Environment variable holding the worker-thread count (default: all cores).
pub const THREADS_ENV: &str = "GPVAR_THREADS";

#[derive(Parser)]
#[command(name = "gpvar", version, about = "GP-VAR estimation, forecasting and impulse responses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Every subcommand takes `--config FILE` and any number of `--key value`
/// overrides; see the README for the key list.
#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Transform and demean a raw CSV; write the panel that estimation would use.
    Inspect(Overrides),
    /// Simulate the nonlinear three-variable benchmark process and its latent truths.
    SimulateDgp(Overrides),
    /// Simulate, estimate and report recovery of the conditional means.
    Verify(Overrides),
    /// Run the sampler and save posterior draws.
    Estimate(Overrides),
    /// Iterate the posterior predictive from saved draws.
    Forecast(Overrides),
    /// Generalized impulse responses from saved draws.
    Girf(Overrides),
    /// Expanding-window density forecast evaluation.
    Backtest(Overrides),
    /// Time single-equation sweeps across numbers of regressors.
    BenchScaling(Overrides),
}

#[derive(clap::Args, Debug, Clone)]
struct Overrides {
    #[arg(allow_hyphen_values = true, trailing_var_arg = true, num_args = 0..)]
    args: Vec<String>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Inspect(_) => "inspect",
            Command::SimulateDgp(_) => "simulate-dgp",
            Command::Verify(_) => "verify",
            Command::Estimate(_) => "estimate",
            Command::Forecast(_) => "forecast",
            Command::Girf(_) => "girf",
            Command::Backtest(_) => "backtest",
            Command::BenchScaling(_) => "bench-scaling",
        }
    }

    fn overrides(&self) -> &[String] {
        match self {
            Command::Inspect(o)
            | Command::SimulateDgp(o)
            | Command::Verify(o)
            | Command::Estimate(o)
            | Command::Forecast(o)
            | Command::Girf(o)
            | Command::Backtest(o)
            | Command::BenchScaling(o) => &o.args,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<gpvar_core::Error> for CliError {
    fn from(e: gpvar_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Split `--config FILE` out of the override list.
fn config_path(args: &[String]) -> Result<(Option<PathBuf>, Vec<String>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut i = 0;
    while i < args.len() {
        if let Some(v) = args[i].strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
        } else if args[i] == "--config" {
            let v = args.get(i + 1).ok_or_else(|| CliError::Config("--config needs a file".into()))?;
            path = Some(PathBuf::from(v));
            i += 1;
        } else {
            rest.push(args[i].clone());
        }
        i += 1;
    }
    Ok((path, rest))
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| {
        let (file, rest) = config_path(cli.command.overrides())?;
        let cfg = config::parse_config(file.as_deref(), &rest)?;
        commands::run(cli.command.name(), &cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gpvar {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
