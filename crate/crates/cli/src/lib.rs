//! Command-line driver: attention operators, schedules, kernel evolution runs
//! and validation suites, written as CSV or JSON plus a `manifest.json`.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use spa_core::kernels::DecayRate;

use output::{Format, Manifest, Status};

#[derive(Debug, Parser)]
#[command(name = "spa", version, about = "Signal preserving attention toolkit")]
pub struct Cli {
    /// Seed for every random draw (overrides a config file's seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "spa-out")]
    pub out: PathBuf,
    /// Output encoding for matrices and tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write A, D, P and B for one attention operator.
    AttnMatrix(AttnMatrixArgs),
    /// Evolve kernels through a stack described by a TOML config.
    KernelEvolve(KernelEvolveArgs),
    /// Write an E-SPA or U-SPA depth schedule.
    Schedule(ScheduleArgs),
    /// Run a named invariant suite and print a pass/fail table.
    Validate(ValidateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::AttnMatrix(_) => "attn-matrix",
            Command::KernelEvolve(_) => "kernel-evolve",
            Command::Schedule(_) => "schedule",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaMethod {
    Espa,
    Uspa,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct AttnMatrixArgs {
    #[arg(long, value_enum)]
    pub method: SpaMethod,
    /// Sequence length.
    #[arg(long = "T")]
    pub t: usize,
    #[arg(long, default_value = "inf")]
    pub gamma_in: DecayRate,
    #[arg(long)]
    pub gamma_out: Option<DecayRate>,
    #[arg(long, default_value_t = 0.0)]
    pub rho_in: f64,
    #[arg(long)]
    pub rho_out: Option<f64>,
    /// Magnitude of the bias at zero-probability positions.
    #[arg(long, default_value_t = spa_core::kernels::DEFAULT_NEG_BIAS)]
    pub neg_bias: f64,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct KernelEvolveArgs {
    /// TOML run configuration.
    pub config: PathBuf,
}

#[derive(Debug, Args, serde::Serialize)]
#[group(skip)]
#[command(group = clap::ArgGroup::new("family").required(true).multiple(false))]
pub struct ScheduleArgs {
    #[arg(long, group = "family")]
    pub espa: bool,
    #[arg(long, group = "family")]
    pub uspa: bool,
    /// Depth.
    #[arg(long = "L")]
    pub depth: usize,
    #[arg(long = "gamma-L")]
    pub gamma_final: Option<f64>,
    #[arg(long = "rho-L")]
    pub rho_final: Option<f64>,
    /// Repeated-token fraction (sets the U-SPA starting value).
    #[arg(long, default_value_t = 0.0)]
    pub r: f64,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct ValidateArgs {
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(spa_core::validation::Suite::NAMES))]
    pub suite: String,
}

/// Failure with its exit code: 1 validation, 2 configuration, 3 numerical.
#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            status: Status::ConfigError,
            error: error.into(),
        }
    }

    pub fn numeric(error: impl Into<anyhow::Error>) -> Self {
        Self {
            status: Status::NumericFailure,
            error: error.into(),
        }
    }

    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self {
            status: Status::ValidationFailed,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.status {
            Status::Success => 0,
            Status::ValidationFailed => 1,
            Status::ConfigError => 2,
            Status::NumericFailure => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<spa_core::Error> for CliError {
    fn from(e: spa_core::Error) -> Self {
        if e.is_config_error() {
            CliError::config(e)
        } else {
            CliError::numeric(e)
        }
    }
}

/// Runs the command, writes the manifest, and returns the process exit code.
pub fn run(cli: &Cli) -> ExitCode {
    let start = Instant::now();
    let mut manifest = Manifest::new(cli.command.name(), cli.seed.unwrap_or(0));
    let result = commands::dispatch(cli, &mut manifest);
    manifest
        .timings
        .insert("total_seconds".into(), start.elapsed().as_secs_f64());
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            manifest.status = e.status;
            manifest.error = Some(e.to_string());
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    if let Err(e) = manifest.write(&cli.out) {
        eprintln!("error: cannot write manifest: {e:#}");
        return ExitCode::from(code.max(2));
    }
    ExitCode::from(code)
}
