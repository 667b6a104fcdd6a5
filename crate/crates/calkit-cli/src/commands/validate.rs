use std::path::PathBuf;

use calkit_core::record::{load_dataset, ErrorPolicy, TaskKind};
use calkit_core::{Error, Result};

use crate::common::RunContext;

#[derive(clap::Args)]
pub struct Args {
    /// JSONL dataset to validate.
    path: PathBuf,

    /// Task kind: mc | open.
    #[arg(long)]
    task: String,
}

pub fn run(_ctx: &RunContext, args: Args) -> Result<()> {
    let task = TaskKind::parse(&args.task)?;
    // collect every problem instead of stopping at the first
    let loaded = load_dataset(&args.path, task, ErrorPolicy::Skip)?;
    for issue in &loaded.skipped {
        eprintln!("line {}: {}", issue.line, issue.error);
    }
    println!("{}", serde_json::to_string_pretty(&loaded.manifest).expect("manifest serializes"));
    if loaded.skipped.is_empty() {
        Ok(())
    } else {
        Err(Error::validation(
            "dataset",
            format!("{} invalid line(s) in {}", loaded.skipped.len(), args.path.display()),
        ))
    }
}
