//! `qbridge`: solve, verify and simulate bridge scenarios from config files.
//!
//! Exit codes: 0 all checks passed, 1 a check failed (reports are still
//! written), 2 usage or configuration error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] qbridge_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qbridge",
    version,
    about = "Schrödinger bridges, complex potentials and their checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Scenario TOML, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a Schrödinger bridge and check it against the wave equation.
    SolveSb {
        #[command(flatten)]
        io: ConfigArgs,
        /// Marginal tolerance of the bridge iteration.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Integrate a manufactured case and run every residual check.
    Manufactured {
        #[command(flatten)]
        io: ConfigArgs,
        /// Relative tolerance of the residual checks.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Rerun the residual checks on a stored solution directory.
    Verify {
        dir: PathBuf,
        /// Relative tolerance of the residual checks.
        #[arg(long)]
        tol: Option<f64>,
        /// Where to write the report; defaults to the solution directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-refinement study of a pipeline.
    Refine {
        #[command(flatten)]
        io: ConfigArgs,
        /// Comma-separated points per axis, coarse to fine.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
    },
    /// Steer particles with the control of a stored solution.
    Ensemble {
        dir: PathBuf,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Largest accepted terminal L1 distance.
        #[arg(long)]
        tol: Option<f64>,
        /// Also dump every trajectory to `trajectories.bin`.
        #[arg(long)]
        record: bool,
        /// Scenario whose `[ensemble]` table supplies defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to `<dir>/ensemble`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::SolveSb { io, tol } => commands::solve_sb(&io.config, io.out.as_deref(), tol),
        Command::Manufactured { io, tol } => {
            commands::manufactured(&io.config, io.out.as_deref(), tol)
        }
        Command::Verify { dir, tol, out } => commands::verify(&dir, tol, out.as_deref()),
        Command::Refine { io, levels } => commands::refine(&io.config, io.out.as_deref(), levels),
        Command::Ensemble {
            dir,
            particles,
            seed,
            tol,
            record,
            config,
            out,
        } => commands::ensemble(
            &dir,
            commands::EnsembleFlags {
                particles,
                seed,
                tol,
                record,
                config,
            },
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
