//! `vlasov-steady`: scenario-driven runs of the stationary solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod error;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use crate::commands::Context;
use crate::error::{CliError, ExitKind};
use crate::scenario::LoadedScenario;

#[derive(Parser)]
#[command(name = "vlasov-steady", version, about = "Stationary Vlasov-Poisson states around a background charge")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Output directory, overriding the scenario's [output] dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the extension and g table and check the structural conditions.
    Gcheck { scenario: PathBuf },
    /// Solve on the periodic 3D grid.
    Solve { scenario: PathBuf },
    /// Solve the radial problem for a point charge at the origin.
    Radial { scenario: PathBuf },
    /// Evaluate f on sample points and check the Vlasov and boundary identities.
    Sample {
        scenario: PathBuf,
        /// Reuse a Q field written by `solve`.
        #[arg(long)]
        q_file: Option<PathBuf>,
    },
    /// Compare velocity quadrature of f with the g table node by node.
    Density {
        scenario: PathBuf,
        #[arg(long)]
        q_file: Option<PathBuf>,
    },
    /// Solve with two extensions and measure how far apart the states are.
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        beta1: Option<f64>,
        #[arg(long)]
        beta2: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gcheck { .. } => "gcheck",
            Command::Solve { .. } => "solve",
            Command::Radial { .. } => "radial",
            Command::Sample { .. } => "sample",
            Command::Density { .. } => "density",
            Command::Compare { .. } => "compare",
        }
    }

    fn scenario(&self) -> &PathBuf {
        match self {
            Command::Gcheck { scenario }
            | Command::Solve { scenario }
            | Command::Radial { scenario }
            | Command::Sample { scenario, .. }
            | Command::Density { scenario, .. }
            | Command::Compare { scenario, .. } => scenario,
        }
    }
}

fn run(cli: &Cli, ls: &LoadedScenario) -> Result<(), CliError> {
    let ctx = Context {
        command: cli.command.name(),
        scenario: ls,
        out_dir: ls.output_dir(cli.out.as_deref()),
    };
    let result = match &cli.command {
        Command::Gcheck { .. } => commands::gcheck(&ctx),
        Command::Solve { .. } => commands::solve(&ctx),
        Command::Radial { .. } => commands::radial(&ctx),
        Command::Sample { q_file, .. } => commands::sample(&ctx, q_file.as_deref()),
        Command::Density { q_file, .. } => commands::density(&ctx, q_file.as_deref()),
        Command::Compare { beta1, beta2, .. } => commands::compare_cmd(&ctx, *beta1, *beta2),
    };
    if let Err(e) = &result {
        commands::write_failure(&ctx, e);
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = LoadedScenario::load(cli.command.scenario()).and_then(|ls| run(&cli, &ls));
    match outcome {
        Ok(()) => ExitCode::from(ExitKind::Success.code() as u8),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_kind().code() as u8)
        }
    }
}
