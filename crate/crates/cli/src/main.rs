//! Command-line front end: configuration ingestion, subcommand dispatch,
//! artifact emission. Exit codes: 0 pass, 1 check failure, 2 usage or
//! configuration error.

// validations use `!(x > 0.0)` so NaN fails them along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "repsys",
    version,
    about = "Simulation and repair-rate control synthesis for two-state repairable systems"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Reserved; all solvers are deterministic and ignore it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the target profile against the admissibility conditions.
    Validate,
    /// Exact open-loop run under the static repair-rate design.
    SimulateOpen,
    /// Exact closed-loop run of a single feedback stage.
    SimulateClosedStage,
    /// Synthesize and run the staged feedback controller.
    Control,
    /// Finite-volume vs characteristics refinement study.
    Compare,
    /// Boundedness scan of the feedback-hazard correction term.
    ScanMu,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let run = || -> Result<(), Failure> {
        let config_path = cli
            .config
            .as_ref()
            .ok_or_else(|| Failure::Usage("--config PATH is required".into()))?;
        let cfg = RunConfig::load(config_path).map_err(Failure::Usage)?;
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .ok_or_else(|| {
                Failure::Usage("no output directory (--out or config output_dir)".into())
            })?;
        match cli.command {
            Command::Validate => commands::cmd_validate(&cfg, &out),
            Command::SimulateOpen => commands::cmd_simulate_open(&cfg, &out),
            Command::SimulateClosedStage => commands::cmd_simulate_closed_stage(&cfg, &out),
            Command::Control => commands::cmd_control(&cfg, &out),
            Command::Compare => commands::cmd_compare(&cfg, &out),
            Command::ScanMu => commands::cmd_scan_mu(&cfg, &out),
        }
    };

    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
