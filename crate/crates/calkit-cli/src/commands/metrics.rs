use std::fmt::Write as _;
use std::path::PathBuf;

use calkit_core::metrics::{bin_predictions, prediction_points, summarize_points, BinScheme};
use calkit_core::record::{load_dataset, ErrorPolicy, TaskKind};
use calkit_core::Result;
use serde_json::json;

use crate::common::{write_manifest, write_text, RunContext};

#[derive(clap::Args)]
pub struct Args {
    /// Records with option_logits and gold answers.
    records: PathBuf,

    #[arg(long, default_value_t = 10)]
    bins: usize,

    /// Binning scheme: width | mass.
    #[arg(long, default_value = "width")]
    scheme: String,

    /// Row label in reports; defaults to the first record's model_id.
    #[arg(long)]
    label: Option<String>,

    /// Skip records missing logits or gold instead of failing.
    #[arg(long)]
    skip_invalid: bool,

    /// Summary JSON output.
    #[arg(long, default_value = "summary.json")]
    out: PathBuf,

    /// Reliability table CSV (bin_lower, bin_upper, count, mean_conf, mean_acc).
    #[arg(long)]
    reliability: Option<PathBuf>,
}

pub fn run(ctx: &RunContext, args: Args) -> Result<()> {
    let scheme = BinScheme::parse(&args.scheme)?;
    let policy = if args.skip_invalid { ErrorPolicy::Skip } else { ErrorPolicy::FailFast };
    let loaded = load_dataset(&args.records, TaskKind::MultipleChoice, policy)?;

    let points = prediction_points(&loaded.records, policy)?;
    let summary = summarize_points(&points, args.bins, scheme)?;
    let table = bin_predictions(&points, args.bins, scheme)?;

    let label = args
        .label
        .clone()
        .unwrap_or_else(|| loaded.records[0].model_id.clone());
    let body = json!({
        "label": label,
        "n_records": points.len(),
        "bins": args.bins,
        "scheme": scheme,
        "seed": ctx.seed,
        "accuracy": summary.accuracy,
        "mean_confidence": summary.mean_confidence,
        "ece": summary.ece,
        "mce": summary.mce,
        "ence": summary.ence,
    });
    write_text(&args.out, &serde_json::to_string_pretty(&body).expect("summary serializes"))?;

    let mut outputs: Vec<&std::path::Path> = vec![&args.out];
    if let Some(reliability) = &args.reliability {
        let mut csv_body = String::from("bin_lower,bin_upper,count,mean_conf,mean_acc\n");
        for bin in &table.bins {
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                csv_body,
                "{},{},{},{},{}",
                bin.lower,
                bin.upper,
                bin.count,
                cell(bin.conf_mean),
                cell(bin.acc_mean)
            );
        }
        write_text(reliability, &csv_body)?;
        outputs.push(reliability);
    }
    write_manifest(ctx, "metrics", &[&args.records], &outputs)?;

    println!(
        "{label}: acc {:.3} conf {:.3} ece {:.3} mce {:.3} ence {:.3} (n = {})",
        summary.accuracy,
        summary.mean_confidence,
        summary.ece,
        summary.mce,
        summary.ence,
        points.len()
    );
    Ok(())
}
