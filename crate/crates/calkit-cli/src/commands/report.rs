use std::path::{Path, PathBuf};

use calkit_core::idk::QuadrantCounts;
use calkit_core::metrics::CalibrationSummary;
use calkit_core::report::{render_quadrant_table, render_summary_table, TableFormat};
use calkit_core::{Error, Result};
use serde_json::Value;

use crate::common::{write_manifest, write_text, RunContext};

#[derive(clap::Subcommand)]
pub enum Command {
    /// Render Model/Acc/Conf/ECE/MCE/ENCE rows from summary JSON files.
    Summary(Args),
    /// Render IK-IDK/IDK-IDK/IK-IK/IDK-IK/TRUTHFUL rows from quadrant JSON files.
    Quadrants(Args),
}

#[derive(clap::Args)]
pub struct Args {
    /// Result files produced by `metrics` / `idk quadrants`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,

    /// Output format: text | csv.
    #[arg(long, default_value = "text")]
    format: String,

    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_json(path: &Path) -> Result<Value> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::Parse { line: 0, message: e.to_string() })
}

fn label_of(value: &Value, path: &Path) -> String {
    value
        .get("label")
        .and_then(Value::as_str)
        .map(String::from)
        .unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        })
}

fn require_f64(value: &Value, field: &str, path: &Path) -> Result<f64> {
    value.get(field).and_then(Value::as_f64).ok_or_else(|| {
        Error::validation(field, format!("missing numeric `{field}` in {}", path.display()))
    })
}

fn emit(ctx: &RunContext, command: &str, args: &Args, table: String) -> Result<()> {
    match &args.out {
        Some(out) => {
            write_text(out, &table)?;
            let inputs: Vec<&Path> = args.inputs.iter().map(PathBuf::as_path).collect();
            write_manifest(ctx, command, &inputs, &[out])?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

pub fn run(ctx: &RunContext, command: Command) -> Result<()> {
    match command {
        Command::Summary(args) => {
            let format = TableFormat::parse(&args.format)?;
            let mut rows = Vec::new();
            for path in &args.inputs {
                let value = load_json(path)?;
                rows.push((
                    label_of(&value, path),
                    CalibrationSummary {
                        accuracy: require_f64(&value, "accuracy", path)?,
                        mean_confidence: require_f64(&value, "mean_confidence", path)?,
                        ece: require_f64(&value, "ece", path)?,
                        mce: require_f64(&value, "mce", path)?,
                        ence: require_f64(&value, "ence", path)?,
                    },
                ));
            }
            emit(ctx, "report summary", &args, render_summary_table(&rows, format)?)
        }
        Command::Quadrants(args) => {
            let format = TableFormat::parse(&args.format)?;
            let mut rows = Vec::new();
            for path in &args.inputs {
                let value = load_json(path)?;
                let cell = |field: &str| value.get(field).and_then(Value::as_u64);
                let required = |field: &str| -> Result<u64> {
                    cell(field).ok_or_else(|| {
                        Error::validation(field, format!("missing count `{field}` in {}", path.display()))
                    })
                };
                rows.push((
                    label_of(&value, path),
                    QuadrantCounts {
                        ik_idk: required("ik_idk")?,
                        idk_idk: required("idk_idk")?,
                        ik_ik: cell("ik_ik"),
                        idk_ik: cell("idk_ik"),
                    },
                ));
            }
            emit(ctx, "report quadrants", &args, render_quadrant_table(&rows, format)?)
        }
    }
}
