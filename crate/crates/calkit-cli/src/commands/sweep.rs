use std::path::PathBuf;

use calkit_core::sweep::{
    export_curves, read_items, run_sweep, write_raw_rows, PromptMode, QuestionForm, SweepOptions,
};
use calkit_core::{Error, Result};

use crate::common::{write_manifest, write_text, RunContext};

#[derive(clap::Args)]
pub struct Args {
    /// Fusion items JSONL.
    items: PathBuf,

    /// Comma-separated sigma levels in 8-bit pixel units, e.g. 0,25,50,100.
    #[arg(long)]
    sigmas: String,

    /// Question form: mc | open.
    #[arg(long)]
    form: String,

    #[arg(long)]
    client: Option<String>,

    /// Prompt mode: image_plus_text | image_only | text_only.
    #[arg(long, default_value = "image_plus_text")]
    mode: String,

    /// Samples per open-ended cell.
    #[arg(long, default_value_t = 10)]
    samples: usize,

    /// Base directory for relative image refs.
    #[arg(long)]
    image_root: Option<PathBuf>,

    /// Grid CSV output.
    #[arg(long, default_value = "grid.csv")]
    out: PathBuf,

    /// Raw per-item JSONL output.
    #[arg(long)]
    raw: Option<PathBuf>,
}

pub fn run(ctx: &RunContext, args: Args) -> Result<()> {
    let sigmas: Vec<f64> = args
        .sigmas
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::validation("sigmas", format!("bad sigma `{s}`")))
        })
        .collect::<Result<_>>()?;
    let form = QuestionForm::parse(&args.form)?;
    let mode = match args.mode.as_str() {
        "image_plus_text" => PromptMode::ImagePlusText,
        "image_only" => PromptMode::ImageOnly,
        "text_only" => PromptMode::TextOnly,
        other => return Err(Error::validation("mode", format!("unknown mode `{other}`"))),
    };

    let items = read_items(&args.items)?;
    let client = ctx.client(args.client.as_deref())?;
    let options = SweepOptions {
        mode,
        samples_per_cell: args.samples,
        image_root: args.image_root.clone(),
        ..SweepOptions::default()
    };
    let (grid, rows) = run_sweep(&items, &sigmas, client.as_ref(), form, &options)?;

    write_text(&args.out, &export_curves(&grid))?;
    let mut outputs: Vec<&std::path::Path> = vec![&args.out];
    if let Some(raw) = &args.raw {
        write_raw_rows(raw, &rows)?;
        outputs.push(raw);
    }
    write_manifest(ctx, "sweep", &[&args.items], &outputs)?;

    let incomplete = grid.cells.iter().filter(|c| c.incomplete).count();
    println!(
        "swept {} items over {} sigma x {} k cells ({} incomplete)",
        items.len(),
        grid.sigmas.len(),
        grid.k_values.len(),
        incomplete
    );
    if incomplete > 0 {
        return Err(Error::Incomplete(format!("{incomplete} grid cell(s) incomplete")));
    }
    Ok(())
}
