//! Table rendering in the summary/quadrant layouts, plus run manifests.
//!
//! Numeric display: 3 decimals (half-up) for metrics, 2-decimal
//! percentages for TRUTHFUL, trailing zeros kept so output is
//! machine-diffable. OOD rows print "/" for the absent IK cells.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idk::{truthful_score, QuadrantCounts};
use crate::metrics::CalibrationSummary;
use crate::util::{round_half_up, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

impl TableFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::validation("format", format!("expected `text` or `csv`, got `{other}`"))),
        }
    }
}

/// Fixed-width 3-decimal metric cell, half-up.
pub fn fmt_metric(value: f64) -> String {
    format!("{:.3}", round_half_up(value, 3))
}

/// Percentage with 2 decimals, half-up: 0.4764 -> "47.64%".
pub fn fmt_percent(fraction: f64) -> String {
    format!("{:.2}%", round_half_up(fraction * 100.0, 2))
}

fn render_rows(header: &[&str], rows: &[Vec<String>], format: TableFormat) -> String {
    match format {
        TableFormat::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "{}", header.join(","));
            for row in rows {
                let _ = writeln!(out, "{}", row.join(","));
            }
            out
        }
        TableFormat::Text => {
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for row in rows {
                for (i, cell) in row.iter().enumerate() {
                    widths[i] = widths[i].max(cell.len());
                }
            }
            let mut out = String::new();
            let mut line = |cells: Vec<&str>| {
                let rendered: Vec<String> = cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
                    .collect();
                let _ = writeln!(out, "{}", rendered.join("  ").trim_end());
            };
            line(header.to_vec());
            for row in rows {
                line(row.iter().map(String::as_str).collect());
            }
            out
        }
    }
}

/// Columns: Model, Acc, Conf, ECE, MCE, ENCE; row order as given.
pub fn render_summary_table(
    summaries: &[(String, CalibrationSummary)],
    format: TableFormat,
) -> Result<String> {
    if summaries.is_empty() {
        return Err(Error::EmptyInput("render_summary_table"));
    }
    let header = ["Model", "Acc", "Conf", "ECE", "MCE", "ENCE"];
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|(label, s)| {
            vec![
                label.clone(),
                fmt_metric(s.accuracy),
                fmt_metric(s.mean_confidence),
                fmt_metric(s.ece),
                fmt_metric(s.mce),
                fmt_metric(s.ence),
            ]
        })
        .collect();
    Ok(render_rows(&header, &rows, format))
}

/// Columns: Model, IK-IDK, IDK-IDK, IK-IK, IDK-IK, TRUTHFUL.
pub fn render_quadrant_table(
    rows: &[(String, QuadrantCounts)],
    format: TableFormat,
) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("render_quadrant_table"));
    }
    let header = ["Model", "IK-IDK", "IDK-IDK", "IK-IK", "IDK-IK", "TRUTHFUL"];
    let mut rendered = Vec::with_capacity(rows.len());
    for (label, counts) in rows {
        let truthful = truthful_score(counts)
            .map_err(|_| Error::Render(format!("row `{label}` has zero total")))?;
        let cell = |v: Option<u64>| v.map(|n| n.to_string()).unwrap_or_else(|| "/".into());
        rendered.push(vec![
            label.clone(),
            counts.ik_idk.to_string(),
            counts.idk_idk.to_string(),
            cell(counts.ik_ik),
            cell(counts.idk_ik),
            fmt_percent(truthful),
        ]);
    }
    Ok(render_rows(&header, &rendered, format))
}

// ─── run manifests ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run bit-exactly in replay mode:
/// content hashes of the inputs, the seed, and the toolkit version.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], seed: u64) -> Self {
        Self {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: args.to_vec(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputDigest {
            path: path.to_string_lossy().into_owned(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().to_string_lossy().into_owned());
    }

    /// Write next to the primary output as `<output>.manifest.json`.
    pub fn write_beside(&self, primary_output: impl AsRef<Path>) -> Result<PathBuf> {
        let mut name = primary_output.as_ref().as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
