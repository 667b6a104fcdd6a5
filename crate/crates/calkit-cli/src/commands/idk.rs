use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use calkit_core::idk::{
    build_ood_mcq, classify_quadrant, detect_refusal, read_articles, read_trials, run_trials,
    segment_known, truthful_score, Knowledge, KnowledgeLabel, PhraseSet, QuadrantCounts,
    TrialOptions,
};
use calkit_core::record::{load_dataset, ErrorPolicy, TaskKind};
use calkit_core::report::{render_quadrant_table, TableFormat};
use calkit_core::{Error, Result};
use serde_json::{json, Value};

use crate::common::{read_lines, write_manifest, write_text, RunContext};

#[derive(clap::Subcommand)]
pub enum Command {
    /// Label records IK/IDK from repeated-answer trials.
    Segment(SegmentArgs),
    /// Four-quadrant classification and the TRUTHFUL score.
    Quadrants(QuadrantsArgs),
    /// Build OOD multiple-choice items from pre-fetched articles.
    BuildOod(BuildOodArgs),
}

#[derive(clap::Args)]
pub struct SegmentArgs {
    /// Trials JSONL, or a records JSONL when --run is set.
    input: PathBuf,

    /// Run the trials now against --client instead of reading them.
    #[arg(long)]
    run: bool,

    #[arg(long)]
    client: Option<String>,

    /// Trials per record.
    #[arg(long, default_value_t = 10)]
    n: usize,

    #[arg(long, default_value_t = 1.0)]
    temperature: f64,

    #[arg(long, default_value_t = 0.95)]
    top_p: f64,

    /// Persist freshly run trials here.
    #[arg(long)]
    trials_out: Option<PathBuf>,

    /// IK iff trial accuracy >= threshold.
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,

    #[arg(long, default_value = "labels.jsonl")]
    out: PathBuf,
}

#[derive(clap::Args)]
pub struct QuadrantsArgs {
    /// Answers JSONL: {"record_id", "answer"} per line.
    answers: PathBuf,

    /// Labels JSONL from `idk segment` (required unless --ood).
    #[arg(long)]
    labels: Option<PathBuf>,

    /// OOD mode: every item is assumed unknown; IK cells are absent.
    #[arg(long)]
    ood: bool,

    /// Condition tag recorded in the report: on | off.
    #[arg(long, default_value = "off")]
    prompting: String,

    /// Refusal phrases file (one per line); defaults to the built-in set.
    #[arg(long)]
    phrases: Option<PathBuf>,

    /// Row label in the report.
    #[arg(long, default_value = "run")]
    label: String,

    #[arg(long, default_value = "quadrants.json")]
    out: PathBuf,
}

#[derive(clap::Args)]
pub struct BuildOodArgs {
    /// Pre-fetched articles JSONL: {"id", "text", "image_ref"?}.
    articles: PathBuf,

    /// Generator backend spec.
    #[arg(long)]
    client: Option<String>,

    #[arg(long, default_value_t = 5)]
    k_questions: usize,

    #[arg(long, default_value = "ood.jsonl")]
    out: PathBuf,
}

pub fn run(ctx: &RunContext, command: Command) -> Result<()> {
    match command {
        Command::Segment(args) => segment(ctx, args),
        Command::Quadrants(args) => quadrants(ctx, args),
        Command::BuildOod(args) => build_ood(ctx, args),
    }
}

fn segment(ctx: &RunContext, args: SegmentArgs) -> Result<()> {
    let (trial_sets, mut failures) = if args.run {
        let loaded = load_dataset(&args.input, TaskKind::MultipleChoice, ErrorPolicy::FailFast)?;
        let client = ctx.client(args.client.as_deref())?;
        let options = TrialOptions {
            n: args.n,
            temperature: args.temperature,
            top_p: args.top_p,
            ..TrialOptions::default()
        };
        let run = run_trials(&loaded.records, client.as_ref(), &options)?;
        if let Some(trials_out) = &args.trials_out {
            calkit_core::idk::write_trials(trials_out, &run.trial_sets)?;
        }
        let failures: Vec<String> = run
            .failures
            .iter()
            .map(|f| format!("record {}: {}", f.record_id, f.error))
            .collect();
        (run.trial_sets, failures)
    } else {
        (read_trials(&args.input)?, Vec::new())
    };

    let mut body = String::new();
    for set in &trial_sets {
        let label = segment_known(set, args.threshold)?;
        let row = json!({
            "record_id": set.record_id,
            "label": label.label,
            "trial_accuracy": label.trial_accuracy,
            "threshold": label.threshold,
        });
        body.push_str(&row.to_string());
        body.push('\n');
    }
    write_text(&args.out, &body)?;

    let mut outputs: Vec<&Path> = vec![&args.out];
    if let Some(trials_out) = &args.trials_out {
        if args.run {
            outputs.push(trials_out);
        }
    }
    write_manifest(ctx, "idk segment", &[&args.input], &outputs)?;

    println!("segmented {} records into {}", trial_sets.len(), args.out.display());
    for failure in failures.drain(..) {
        eprintln!("failed: {failure}");
    }
    Ok(())
}

fn read_answers(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut answers = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let record_id = value
            .get("record_id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::validation("record_id", format!("missing at line {}", idx + 1)))?;
        let answer = value
            .get("answer")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::validation("answer", format!("missing at line {}", idx + 1)))?;
        answers.push((record_id.to_string(), answer.to_string()));
    }
    if answers.is_empty() {
        return Err(Error::EmptyDataset { path: path.to_path_buf() });
    }
    Ok(answers)
}

fn read_labels(path: &Path) -> Result<std::collections::HashMap<String, KnowledgeLabel>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = std::collections::HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let record_id = value
            .get("record_id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::validation("record_id", format!("missing at line {}", idx + 1)))?
            .to_string();
        let label = match value.get("label").and_then(Value::as_str) {
            Some("IK") => Knowledge::Ik,
            Some("IDK") => Knowledge::Idk,
            other => {
                return Err(Error::validation(
                    "label",
                    format!("expected IK or IDK at line {}, got {other:?}", idx + 1),
                ))
            }
        };
        labels.insert(
            record_id,
            KnowledgeLabel {
                label,
                trial_accuracy: value.get("trial_accuracy").and_then(Value::as_f64).unwrap_or(0.0),
                threshold: value.get("threshold").and_then(Value::as_f64).unwrap_or(1.0),
            },
        );
    }
    Ok(labels)
}

fn quadrants(ctx: &RunContext, args: QuadrantsArgs) -> Result<()> {
    if !matches!(args.prompting.as_str(), "on" | "off") {
        return Err(Error::validation("prompting", "expected `on` or `off`"));
    }
    let phrases = match &args.phrases {
        Some(path) => PhraseSet::new(read_lines(path)?)?,
        None => PhraseSet::default(),
    };
    let answers = read_answers(&args.answers)?;

    let counts = if args.ood {
        QuadrantCounts::tally_ood(answers.iter().map(|(_, a)| detect_refusal(a, &phrases)))
    } else {
        let labels_path = args.labels.as_ref().ok_or_else(|| {
            Error::validation("labels", "--labels is required unless --ood is set")
        })?;
        let labels = read_labels(labels_path)?;
        let mut quadrants = Vec::with_capacity(answers.len());
        for (record_id, answer) in &answers {
            let label = labels.get(record_id).ok_or_else(|| {
                Error::validation("labels", format!("no label for record `{record_id}`"))
            })?;
            quadrants.push(classify_quadrant(label, detect_refusal(answer, &phrases)));
        }
        QuadrantCounts::tally(quadrants)
    };

    let truthful = truthful_score(&counts)?;
    let body = json!({
        "label": args.label,
        "prompting": args.prompting,
        "ik_idk": counts.ik_idk,
        "idk_idk": counts.idk_idk,
        "ik_ik": counts.ik_ik,
        "idk_ik": counts.idk_ik,
        "truthful": truthful,
        "seed": ctx.seed,
    });
    write_text(&args.out, &serde_json::to_string_pretty(&body).expect("report serializes"))?;

    let mut inputs: Vec<&Path> = vec![&args.answers];
    if let Some(labels) = &args.labels {
        inputs.push(labels);
    }
    write_manifest(ctx, "idk quadrants", &inputs, &[&args.out])?;

    print!("{}", render_quadrant_table(&[(args.label.clone(), counts)], TableFormat::Text)?);
    Ok(())
}

fn build_ood(ctx: &RunContext, args: BuildOodArgs) -> Result<()> {
    let articles = read_articles(&args.articles)?;
    let client = ctx.client(args.client.as_deref())?;

    let path = &args.out;
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut written = 0usize;
    let mut failed_articles = Vec::new();
    for article in &articles {
        match build_ood_mcq(article, client.as_ref(), args.k_questions) {
            Ok(build) => {
                for report in &build.dropped {
                    eprintln!("dropped: {report}");
                }
                for item in &build.items {
                    writeln!(file, "{}", serde_json::to_string(item).expect("item serializes"))
                        .map_err(|e| Error::io(path, e))?;
                    written += 1;
                }
            }
            Err(error) => {
                eprintln!("article {}: {error}", article.id);
                failed_articles.push(article.id.clone());
            }
        }
    }
    drop(file);
    write_manifest(ctx, "idk build-ood", &[&args.articles], &[path])?;

    println!("wrote {written} items from {} articles to {}", articles.len(), path.display());
    if !failed_articles.is_empty() {
        return Err(Error::Incomplete(format!(
            "{} article(s) produced no valid items",
            failed_articles.len()
        )));
    }
    Ok(())
}
