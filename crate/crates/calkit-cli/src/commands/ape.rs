use std::path::PathBuf;

use calkit_core::ape::{optimize, OptParams};
use calkit_core::record::{load_dataset, ErrorPolicy, TaskKind};
use calkit_core::{Error, Result};
use serde_json::json;

use crate::common::{read_lines, write_manifest, write_text, RunContext};

#[derive(clap::Args)]
pub struct Args {
    /// Seed suffixes, one per line.
    #[arg(long)]
    seeds: PathBuf,

    /// Top prompts kept per iteration.
    #[arg(long, default_value_t = 4)]
    k: usize,

    /// Paraphrases requested per prompt.
    #[arg(long, default_value_t = 5)]
    m: usize,

    /// Iterations.
    #[arg(long, default_value_t = 10)]
    n: usize,

    /// Accuracy band width for ranking.
    #[arg(long, default_value_t = 0.02)]
    band: f64,

    /// Fixed evaluation records (options + gold answers).
    #[arg(long)]
    eval: PathBuf,

    /// Scored model backend.
    #[arg(long)]
    client: Option<String>,

    /// Paraphrase generator backend.
    #[arg(long)]
    generator: String,

    /// Trace output with per-iteration best and top-k.
    #[arg(long, default_value = "trace.json")]
    out: PathBuf,
}

pub fn run(ctx: &RunContext, args: Args) -> Result<()> {
    let seeds = read_lines(&args.seeds)?;
    if seeds.is_empty() {
        return Err(Error::EmptyInput("seeds"));
    }
    let loaded = load_dataset(&args.eval, TaskKind::MultipleChoice, ErrorPolicy::FailFast)?;
    let model = ctx.client(args.client.as_deref())?;
    let generator = calkit_core::client::ClientRegistry::builtin().build(&args.generator)?;

    let params = OptParams {
        top_k: args.k,
        variants_per_prompt: args.m,
        iterations: args.n,
        band_width: args.band,
    };
    let state = optimize(&seeds, params, &loaded.records, model.as_ref(), generator.as_ref())?;

    let body = json!({
        "seed": ctx.seed,
        "best": state.best,
        "params": state.params,
        "iterations": state.history,
        "final_pool": state.pool,
        "aborted_at": state.aborted_at,
    });
    write_text(&args.out, &serde_json::to_string_pretty(&body).expect("trace serializes"))?;
    write_manifest(ctx, "ape", &[&args.seeds, &args.eval], &[&args.out])?;

    println!(
        "best suffix: {:?} (acc {:.3}, ece {:.3})",
        state.best.text, state.best.accuracy, state.best.ece
    );
    if let Some(iteration) = state.aborted_at {
        return Err(Error::Incomplete(format!(
            "search aborted at iteration {iteration}: all evaluations failed"
        )));
    }
    Ok(())
}
