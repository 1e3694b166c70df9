//! `alrom`: build, validate and exercise active-learning reduced-order models.

mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use alrom::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "ALROM_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "alrom", version, about = "Active-learning construction of PAC-validated neural ROMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Al,
    Conventional,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the reduced-state space and build the PAC validator.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        /// Run directory (overrides the config and the environment).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a ROM, by active learning or on DPS trajectories.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a stored ROM on a stored validator.
    Validate {
        /// ROM header file (`*.json`).
        #[arg(long)]
        rom: PathBuf,
        /// Directory holding `validator.json`.
        #[arg(long)]
        validator: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        tau: f64,
        /// Where to write the report (defaults to the ROM's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll a ROM out on a boundary-temperature scenario.
    Predict {
        #[arg(long)]
        rom: PathBuf,
        /// Scenario file (TOML or JSON).
        #[arg(long)]
        scenario: PathBuf,
        /// Run configuration; defaults to the `config.json` of the ROM's run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect a run directory into a markdown + CSV bundle.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::MissingArtifact | ErrorKind::Artifact => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate { config, out } => commands::estimate(&config, out),
        Command::Train { config, mode, out } => commands::train(&config, mode, out),
        Command::Validate { rom, validator, tau, out } => commands::validate(&rom, &validator, tau, out),
        Command::Predict {
            rom,
            scenario,
            config,
            out,
        } => commands::predict(&rom, &scenario, config, &out),
        Command::Report { run } => commands::report(&run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let body = serde_json::json!({
                "error": format!("{kind:?}"),
                "message": e.to_string(),
            });
            eprintln!("{body}");
            ExitCode::from(exit_code(kind))
        }
    }
}
