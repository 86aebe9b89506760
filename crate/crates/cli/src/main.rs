//! `cpmdid`: batch front end for CPM difference-in-differences.
//!
//! Exit status is 0 on success, 1 on numerical failure (non-convergence,
//! singular designs, failed bootstraps) and 2 on usage or input errors.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cpmdid", version, about = "Difference-in-differences with cumulative probability models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model and write model.json.
    Fit(commands::FitArgs),
    /// ATT, QTT, PTT and MTT with optional bootstrap intervals.
    Estimate(commands::EstimateArgs),
    /// Monte-Carlo bias and coverage study for a scenario.
    Simulate(commands::SimulateArgs),
    /// Residual export and link comparison.
    Diagnose(commands::DiagnoseArgs),
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<cpmdid::Error> for Failure {
    fn from(e: cpmdid::Error) -> Self {
        Failure {
            code: if e.is_numerical() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Diagnose(a) => commands::diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
