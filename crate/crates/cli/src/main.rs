//! `udn`: theorem checks, spiral sweeps, regression runs and aggregation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use udn_core::poisson::SupportBounds;

use commands::{RegressArgs, SpiralArgs, TheoremArgs};

#[derive(Parser)]
#[command(name = "udn", version, about = "Unbounded-depth network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 1000 epochs and 3 seeds.
    Quick,
    /// 4000 epochs.
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Check the support bounds of the 0.95-truncated Poisson family and write margins.csv.
    VerifyTheorem1 {
        #[arg(long, default_value_t = 70)]
        k_max: usize,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, hide = true)]
        bound_slope: Option<f64>,
        #[arg(long, hide = true)]
        bound_intercept: Option<f64>,
    },
    /// Train on the spiral data for one ω or a sweep.
    Spiral {
        /// TOML or JSON run description, or a previous summary.json.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        omega: Option<f64>,
        /// start:stop:step, stop included.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Seed of the first run.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds per (model, ω).
        #[arg(long)]
        seeds: Option<usize>,
        /// udn or fixed:<depth>; repeat or comma-separate for several.
        #[arg(long = "model", value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        lambda_init: Option<f64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Rerun even when a finished run with the same config exists.
        #[arg(long)]
        force: bool,
    },
    /// Repeated train/valid/test regression on a delimited table.
    Regress {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Rebuild plot data and the accuracy table from finished spiral runs.
    Aggregate {
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    match cli.command {
        Command::VerifyTheorem1 {
            k_max,
            out,
            bound_slope,
            bound_intercept,
        } => {
            let d = SupportBounds::default();
            commands::verify_theorem1(&TheoremArgs {
                k_max,
                out,
                bounds: SupportBounds {
                    slope: bound_slope.unwrap_or(d.slope),
                    intercept: bound_intercept.unwrap_or(d.intercept),
                },
            })
        }
        Command::Spiral {
            config,
            omega,
            sweep,
            epochs,
            seed,
            seeds,
            models,
            preset,
            lambda_init,
            out,
            force,
        } => commands::spiral(&SpiralArgs {
            config,
            omega,
            sweep,
            epochs: epochs.or(match preset {
                Some(Preset::Full) => Some(4000),
                _ => None,
            }),
            seed,
            seeds,
            models,
            quick: matches!(preset, Some(Preset::Quick)),
            lambda_init,
            out,
            force,
        }),
        Command::Regress {
            config,
            data,
            target,
            model,
            reps,
            epochs,
            seed,
            out,
        } => commands::regress(&RegressArgs {
            config,
            data,
            target,
            model,
            repetitions: reps,
            epochs,
            seed,
            out,
        }),
        Command::Aggregate { runs } => commands::aggregate(&runs),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("udn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
