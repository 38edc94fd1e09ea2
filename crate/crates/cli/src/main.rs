//! Command-line entry point for the platoon pipeline: generate synthetic
//! scenarios, calibrate follower models, train the social-preference
//! conditioned controller, and report the energy/speed trade-offs.
//!
//! Exit codes: 0 success, 2 input/configuration error, 3 numerical failure
//! during training.

mod args;
mod commands;
mod common;
mod manifest;

use clap::{Parser, Subcommand};
use svo_acc::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "svo-acc",
    version,
    about = "Socially compliant adaptive cruise control at platoon scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic scenario.
    GenSynthetic(commands::gen::GenArgs),
    /// Calibrate follower car-following parameters by grid search.
    Calibrate(commands::calibrate::CalibrateArgs),
    /// Train the controller against the preference-weighted composite loss.
    Train(commands::train::TrainArgs),
    /// Roll out a trained controller across preference angles.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Summarize an evaluation directory.
    Report(commands::report::ReportArgs),
}

/// Maps failures onto the documented exit codes: numerical divergence is 3,
/// every input/configuration/I-O problem is 2.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(CoreError::Divergence { .. }) = cause.downcast_ref::<CoreError>() {
            return 3;
        }
    }
    2
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenSynthetic(args) => commands::gen::run(args),
        Command::Calibrate(args) => commands::calibrate::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Report(args) => commands::report::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
