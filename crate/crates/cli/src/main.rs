//! `qnet`: experiments with efficient quadratic neurons from the command
//! line. Exit codes: 0 success, 1 check failed, 2 input/config error,
//! 3 numerical instability.

mod commands;
mod config;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "qnet", version, about = "Quadratic-neuron network toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's optimizer seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for generated files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Finite-difference check of every analytic gradient on a small net.
    GradCheck(Common),
    /// Parameter/MAC accounting versus a width-matched linear baseline.
    CostReport(Common),
    /// Train a network (or single neuron) and record metrics, histograms
    /// and a checkpoint.
    Train(Common),
    /// Train the same architecture at several ranks k, several times each.
    SweepRank(Common),
    /// Export per-neuron linear/quadratic response maps as PGM images.
    ExportResponse {
        #[command(flatten)]
        common: Common,
        /// Trained model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, qnet::Error> {
    match cli.cmd {
        Cmd::GradCheck(c) => {
            let cfg = RunConfig::load(&c.config)?;
            commands::grad_check(&cfg, c.seed)
        }
        Cmd::CostReport(c) => {
            let cfg = RunConfig::load(&c.config)?;
            commands::cost_report(&cfg, &c.out, c.force)
        }
        Cmd::Train(c) => {
            let cfg = RunConfig::load(&c.config)?;
            commands::train(&cfg, c.seed, &c.out, c.force)
        }
        Cmd::SweepRank(c) => {
            let cfg = RunConfig::load(&c.config)?;
            commands::sweep_rank(&cfg, c.seed, &c.out, c.force)
        }
        Cmd::ExportResponse { common, checkpoint } => {
            let cfg = RunConfig::load(&common.config)?;
            commands::export_response(&cfg, &checkpoint, &common.out, common.force)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code_for(&err) as u8)
        }
    }
}
