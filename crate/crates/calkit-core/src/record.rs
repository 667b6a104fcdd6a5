//! Canonical record/dataset schema: JSONL parsing, validation, and typed
//! access for everything downstream.
//!
//! One JSON object per line. Field names are the wire contract; unknown
//! fields round-trip through a metadata bag instead of being rejected.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// One question instance with per-option logits and/or repeated samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseRecord {
    pub id: String,
    pub question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description_sentences: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub option_logits: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<SampledAnswer>>,
    pub model_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    /// Unknown input fields, preserved verbatim for forward compatibility.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// One sampled answer from a repeated-trial run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledAnswer {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultipleChoice,
    OpenEnded,
}

impl TaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mc" | "multiple_choice" => Ok(TaskKind::MultipleChoice),
            "open" | "open_ended" => Ok(TaskKind::OpenEnded),
            other => Err(Error::validation(
                "task_kind",
                format!("expected `mc` or `open`, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::MultipleChoice => write!(f, "multiple_choice"),
            TaskKind::OpenEnded => write!(f, "open_ended"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub task_kind: TaskKind,
    pub record_count: usize,
    pub source_path: String,
}

/// What to do with invalid lines while loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorPolicy {
    #[default]
    FailFast,
    Skip,
}

/// A skipped line together with the error that disqualified it.
#[derive(Debug)]
pub struct LineIssue {
    pub line: usize,
    pub error: Error,
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub records: Vec<ResponseRecord>,
    pub manifest: DatasetManifest,
    pub skipped: Vec<LineIssue>,
}

/// Raw deserialization target. Shape errors surface as parse errors;
/// invariants are checked afterwards so they can name the field.
#[derive(Deserialize)]
struct RawRecord {
    id: String,
    question: String,
    #[serde(default)]
    options: Option<Vec<String>>,
    #[serde(default)]
    gold_index: Option<GoldIndex>,
    #[serde(default)]
    image_ref: Option<String>,
    #[serde(default)]
    description_sentences: Option<Vec<String>>,
    #[serde(default)]
    option_logits: Option<Vec<f64>>,
    #[serde(default)]
    samples: Option<Vec<SampledAnswer>>,
    model_id: String,
    #[serde(default)]
    condition: Option<String>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Gold answers arrive as 0-based indices or option letters ("A".."Z",
/// any case) and are normalized to indices on input.
enum GoldIndex {
    Index(usize),
    Letter(char),
}

impl<'de> Deserialize<'de> for GoldIndex {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let value = Value::deserialize(deserializer)?;
        match value {
            Value::Number(n) => {
                let idx = n
                    .as_u64()
                    .ok_or_else(|| D::Error::custom(format!("gold_index {n} is not a non-negative integer")))?;
                Ok(GoldIndex::Index(idx as usize))
            }
            Value::String(s) => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_alphabetic() => {
                        Ok(GoldIndex::Letter(c.to_ascii_uppercase()))
                    }
                    _ => Err(D::Error::custom(format!(
                        "gold_index string must be a single option letter, got `{s}`"
                    ))),
                }
            }
            other => Err(D::Error::custom(format!(
                "gold_index must be an integer or option letter, got {other}"
            ))),
        }
    }
}

impl ResponseRecord {
    /// 0 when the record is open-ended (no options).
    pub fn option_count(&self) -> usize {
        self.options.as_ref().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let k = self.option_count();
        if let Some(options) = &self.options {
            if options.is_empty() {
                return Err(Error::validation("options", "options list must be non-empty when present"));
            }
        }
        if let Some(logits) = &self.option_logits {
            if self.options.is_none() {
                return Err(Error::validation(
                    "option_logits",
                    "option_logits present without options",
                ));
            }
            if logits.len() != k {
                return Err(Error::validation(
                    "option_logits",
                    format!("expected {k} entries to match options, got {}", logits.len()),
                ));
            }
            if let Some(bad) = logits.iter().find(|l| !l.is_finite()) {
                return Err(Error::validation(
                    "option_logits",
                    format!("non-finite logit {bad}"),
                ));
            }
        }
        if let Some(gold) = self.gold_index {
            if self.options.is_none() {
                return Err(Error::validation("gold_index", "gold_index present without options"));
            }
            if gold >= k {
                return Err(Error::validation(
                    "gold_index",
                    format!("index {gold} out of range for {k} options"),
                ));
            }
        }
        if self.option_logits.is_none() && self.samples.is_none() {
            return Err(Error::validation(
                "option_logits",
                "record carries neither option_logits nor samples",
            ));
        }
        if let Some(samples) = &self.samples {
            for (i, sample) in samples.iter().enumerate() {
                if sample.text.trim().is_empty() {
                    return Err(Error::validation(
                        "samples",
                        format!("sample {i} text is empty after trimming"),
                    ));
                }
                if !(sample.temperature.is_finite() && sample.temperature > 0.0) {
                    return Err(Error::validation(
                        "samples",
                        format!("sample {i} temperature must be > 0, got {}", sample.temperature),
                    ));
                }
                if !(sample.top_p.is_finite() && sample.top_p > 0.0 && sample.top_p <= 1.0) {
                    return Err(Error::validation(
                        "samples",
                        format!("sample {i} top_p must be in (0,1], got {}", sample.top_p),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_task(&self, task_kind: TaskKind) -> Result<()> {
        match task_kind {
            TaskKind::MultipleChoice if self.options.is_none() => Err(Error::validation(
                "options",
                format!("record `{}` has no options in a multiple_choice dataset", self.id),
            )),
            TaskKind::OpenEnded if self.samples.is_none() => Err(Error::validation(
                "samples",
                format!("record `{}` has no samples in an open_ended dataset", self.id),
            )),
            _ => Ok(()),
        }
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("record serialization cannot fail")
    }
}

/// Parse one JSONL line into a validated record.
pub fn parse_record(line: &str) -> Result<ResponseRecord> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    if !value.is_object() {
        return Err(Error::Parse {
            line: 0,
            message: "line is not a JSON object".into(),
        });
    }
    let raw: RawRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;

    let gold_index = match raw.gold_index {
        None => None,
        Some(GoldIndex::Index(i)) => Some(i),
        Some(GoldIndex::Letter(c)) => Some((c as u8 - b'A') as usize),
    };

    let record = ResponseRecord {
        id: raw.id,
        question: raw.question,
        options: raw.options,
        gold_index,
        image_ref: raw.image_ref,
        description_sentences: raw.description_sentences,
        option_logits: raw.option_logits,
        samples: raw.samples,
        model_id: raw.model_id,
        condition: raw.condition,
        extra: raw.extra,
    };
    record.validate()?;
    Ok(record)
}

/// Load a JSONL dataset, streaming records in file order.
///
/// Whitespace-only lines are ignored. With [`ErrorPolicy::Skip`] invalid
/// lines are collected in `skipped`; a file with zero valid records is an
/// error under either policy.
pub fn load_dataset(
    path: impl AsRef<Path>,
    task_kind: TaskKind,
    policy: ErrorPolicy,
) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_record(&line)
            .map_err(|e| e.at_line(line_no))
            .and_then(|r| r.check_task(task_kind).map(|()| r));
        match (parsed, policy) {
            (Ok(record), _) => records.push(record),
            (Err(error), ErrorPolicy::FailFast) => return Err(error),
            (Err(error), ErrorPolicy::Skip) => skipped.push(LineIssue { line: line_no, error }),
        }
    }

    if records.is_empty() {
        return Err(Error::EmptyDataset { path: path.to_path_buf() });
    }
    let manifest = DatasetManifest {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        task_kind,
        record_count: records.len(),
        source_path: path.to_string_lossy().into_owned(),
    };
    Ok(LoadedDataset { records, manifest, skipped })
}

/// Write records as JSONL, one per line, in order.
pub fn write_records(path: impl AsRef<Path>, records: &[ResponseRecord]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for record in records {
        writeln!(file, "{}", record.to_jsonl()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn option_letter(index: usize) -> String {
    if index < 26 {
        ((b'A' + index as u8) as char).to_string()
    } else {
        format!("({})", index + 1)
    }
}
