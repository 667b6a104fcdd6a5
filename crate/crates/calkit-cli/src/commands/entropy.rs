use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use calkit_core::entropy::{cluster_samples, semantic_entropy, EquivalenceJudge};
use calkit_core::record::{load_dataset, ErrorPolicy, TaskKind};
use calkit_core::Result;

use crate::common::{write_manifest, write_text, RunContext};

#[derive(clap::Args)]
pub struct Args {
    /// Records carrying sampled answers.
    records: PathBuf,

    /// Equivalence judge: exact | client.
    #[arg(long, default_value = "exact")]
    judge: String,

    /// Backend spec for --judge client.
    #[arg(long)]
    client: Option<String>,

    /// Output CSV (id, n_samples, n_clusters, entropy_nats).
    #[arg(long, default_value = "entropy.csv")]
    out: PathBuf,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn run(ctx: &RunContext, args: Args) -> Result<()> {
    let judge = match args.judge.as_str() {
        "exact" | "normalized_exact" => EquivalenceJudge::NormalizedExact,
        _ => {
            let client = ctx.client(args.client.as_deref())?;
            EquivalenceJudge::parse(&args.judge, Some(Arc::from(client)))?
        }
    };
    let loaded = load_dataset(&args.records, TaskKind::OpenEnded, ErrorPolicy::FailFast)?;

    let mut csv_body = String::from("id,n_samples,n_clusters,entropy_nats\n");
    for record in &loaded.records {
        let samples: Vec<String> = record
            .samples
            .as_ref()
            .expect("open_ended loading guarantees samples")
            .iter()
            .map(|s| s.text.clone())
            .collect();
        let partition = cluster_samples(&samples, &judge)?;
        let _ = writeln!(
            csv_body,
            "{},{},{},{}",
            csv_field(&record.id),
            partition.total,
            partition.clusters.len(),
            semantic_entropy(&partition)
        );
    }
    write_text(&args.out, &csv_body)?;
    write_manifest(ctx, "entropy", &[&args.records], &[&args.out])?;
    println!("wrote entropy for {} records to {}", loaded.records.len(), args.out.display());
    Ok(())
}
