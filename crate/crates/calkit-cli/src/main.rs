//! calkit: CLI surface over the calibration toolkit.
//!
//! Exit codes: 0 success, 1 validation error, 2 client/transport error,
//! 3 incomplete results.

mod commands;
mod common;

use std::path::PathBuf;

use calkit_core::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "calkit", version, about = "Uncertainty quantification and calibration toolkit")]
struct Cli {
    /// Seed recorded in run manifests and output artifacts.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Cap on concurrent client calls.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Replay a recorded request/response log instead of the --client backend.
    #[arg(long, global = true, value_name = "LOG")]
    replay: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSONL dataset against the record schema.
    Validate(commands::validate::Args),
    /// Accuracy, confidence, and ECE/MCE/ENCE over a logged dataset.
    Metrics(commands::metrics::Args),
    /// Temperature scaling.
    #[command(subcommand)]
    Ts(commands::ts::Command),
    /// Semantic entropy over sampled answers.
    Entropy(commands::entropy::Args),
    /// IDK protocol: segmentation, quadrants, OOD construction.
    #[command(subcommand)]
    Idk(commands::idk::Command),
    /// Noise-by-text fusion sweep.
    Sweep(commands::sweep::Args),
    /// Prompt-suffix search by accuracy bands then ECE.
    Ape(commands::ape::Args),
    /// Render summary/quadrant tables from result files.
    #[command(subcommand)]
    Report(commands::report::Command),
}

fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Client(_) | Error::Judge { .. } => 2,
        Error::Incomplete(_) => 3,
        _ => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }
    let ctx = common::RunContext {
        seed: cli.seed,
        replay: cli.replay.clone(),
        argv: std::env::args().skip(1).collect(),
    };
    let result = match cli.command {
        Command::Validate(args) => commands::validate::run(&ctx, args),
        Command::Metrics(args) => commands::metrics::run(&ctx, args),
        Command::Ts(command) => commands::ts::run(&ctx, command),
        Command::Entropy(args) => commands::entropy::run(&ctx, args),
        Command::Idk(command) => commands::idk::run(&ctx, command),
        Command::Sweep(args) => commands::sweep::run(&ctx, args),
        Command::Ape(args) => commands::ape::run(&ctx, args),
        Command::Report(command) => commands::report::run(&ctx, command),
    };
    if let Err(error) = result {
        eprintln!("error: {error}");
        let mut source = std::error::Error::source(&error);
        while let Some(inner) = source {
            eprintln!("  caused by: {inner}");
            source = inner.source();
        }
        std::process::exit(exit_code(&error));
    }
}
