//! Command line front end: configuration-driven runs of the simulation
//! library, with subcommands for single trajectories, parameter sweeps,
//! guiding-center experiments, long-time fits, and invariant checks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{cmd_asymptotics, cmd_average, cmd_simulate, cmd_sweep, cmd_verify, CliError};
use config::{load_config, preset, RunConfig};

#[derive(Parser)]
#[command(
    name = "hallflux",
    version,
    about = "Charged-particle dynamics in a magnetic field around a ramped flux line"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one trajectory and write the configured outputs.
    Simulate(RunArgs),
    /// Run a parameter grid; one CSV row of fitted constants per cell.
    Sweep(RunArgs),
    /// Guiding-center runs: averaged trajectory and error-scaling table.
    Average(RunArgs),
    /// Long-time run with tail fits and transport coefficients.
    Asymptotics(RunArgs),
    /// Re-measure builtin invariant suites and report residuals.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration, TOML (or JSON when the path ends in .json).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory receiving relative output paths.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Worker threads for sweep cells (default: all hardware threads).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,

    /// Builtin configuration, instead of --config. Available: fig1.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite: brackets, frozen, actionangle, averaging, asymptotics, all.
    #[arg(default_value = "all")]
    suite: String,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        match (&self.config, &self.preset) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "--config and --preset are mutually exclusive".into(),
            )),
            (Some(path), None) => load_config(path),
            (None, Some(name)) => preset(name),
            (None, None) => Err(CliError::Config(
                "one of --config or --preset is required".into(),
            )),
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Cmd::Simulate(args) => cmd_simulate(&args.resolve()?, &args.out).map(|()| 0),
        Cmd::Sweep(args) => cmd_sweep(&args.resolve()?, &args.out, args.threads).map(|()| 0),
        Cmd::Average(args) => cmd_average(&args.resolve()?, &args.out).map(|()| 0),
        Cmd::Asymptotics(args) => cmd_asymptotics(&args.resolve()?, &args.out).map(|()| 0),
        Cmd::Verify(args) => cmd_verify(&args.suite),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code() as u8)
        }
    }
}
