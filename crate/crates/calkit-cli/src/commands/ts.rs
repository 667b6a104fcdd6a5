use std::path::PathBuf;

use calkit_core::record::{load_dataset, write_records, ErrorPolicy, TaskKind};
use calkit_core::temperature::{fit_temperature, scale_record, FitOptions};
use calkit_core::{Error, Result};
use serde_json::json;

use crate::common::{write_manifest, write_text, RunContext};

#[derive(clap::Subcommand)]
pub enum Command {
    /// Fit T on a calibration split by NLL minimization.
    Fit(FitArgs),
    /// Rewrite option_logits as logits / T.
    Apply(ApplyArgs),
}

#[derive(clap::Args)]
pub struct FitArgs {
    /// Calibration records (option_logits + gold_index).
    records: PathBuf,

    #[arg(long, default_value_t = 0.05)]
    lo: f64,

    #[arg(long, default_value_t = 20.0)]
    hi: f64,

    /// Convergence threshold on the log-T bracket width.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,

    #[arg(long, default_value = "fit.json")]
    out: PathBuf,
}

#[derive(clap::Args)]
pub struct ApplyArgs {
    /// Evaluation records to rescale.
    records: PathBuf,

    /// Temperature to divide logits by.
    #[arg(long)]
    t: f64,

    #[arg(long, default_value = "scaled.jsonl")]
    out: PathBuf,
}

pub fn run(ctx: &RunContext, command: Command) -> Result<()> {
    match command {
        Command::Fit(args) => fit(ctx, args),
        Command::Apply(args) => apply(ctx, args),
    }
}

fn fit(ctx: &RunContext, args: FitArgs) -> Result<()> {
    let loaded = load_dataset(&args.records, TaskKind::MultipleChoice, ErrorPolicy::FailFast)?;
    let options = FitOptions { lo: args.lo, hi: args.hi, tol: args.tol };
    let fit = fit_temperature(&loaded.records, options)?;
    let body = json!({
        "t": fit.t,
        "nll_at_t": fit.nll_at_t,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "flat": fit.flat,
        "bracket": [fit.bracket.0, fit.bracket.1],
        "n_records": loaded.records.len(),
        "seed": ctx.seed,
    });
    write_text(&args.out, &serde_json::to_string_pretty(&body).expect("fit serializes"))?;
    write_manifest(ctx, "ts fit", &[&args.records], &[&args.out])?;
    println!(
        "fitted T = {:.4} (nll {:.4}, {} evaluations, converged: {})",
        fit.t, fit.nll_at_t, fit.iterations, fit.converged
    );
    Ok(())
}

fn apply(ctx: &RunContext, args: ApplyArgs) -> Result<()> {
    if !(args.t.is_finite() && args.t > 0.0) {
        return Err(Error::Domain(format!("--t must be > 0, got {}", args.t)));
    }
    let mut loaded = load_dataset(&args.records, TaskKind::MultipleChoice, ErrorPolicy::FailFast)?;
    for record in &mut loaded.records {
        scale_record(record, args.t)?;
    }
    write_records(&args.out, &loaded.records)?;
    write_manifest(ctx, "ts apply", &[&args.records], &[&args.out])?;
    println!("rescaled {} records by T = {}", loaded.records.len(), args.t);
    Ok(())
}
