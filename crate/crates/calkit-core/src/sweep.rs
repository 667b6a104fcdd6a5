//! Noise-by-text fusion sweep: Gaussian image noise at levels sigma crossed
//! with cumulative description prefixes, querying a backend and recording
//! confidence (multiple-choice) or semantic entropy (open-ended) per cell.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::DynamicImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{with_retries, ModelClient, PromptPayload};
use crate::entropy::{cluster_samples, semantic_entropy, EquivalenceJudge};
use crate::error::{Error, Result};
use crate::metrics::confidence_of;
use crate::record::option_letter;
use crate::util::{mean, stable_seed};

/// One paired item: an image, its split description, and both question forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionItem {
    pub id: String,
    pub image_ref: String,
    pub description_sentences: Vec<String>,
    pub mc_question: McQuestion,
    pub open_question: OpenQuestion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McQuestion {
    pub question: String,
    pub options: Vec<String>,
    pub gold_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenQuestion {
    pub question: String,
    pub gold: String,
}

impl FusionItem {
    pub fn sentence_count(&self) -> usize {
        self.description_sentences.len()
    }

    fn validate(&self) -> Result<()> {
        if self.description_sentences.is_empty() {
            return Err(Error::validation(
                "description_sentences",
                format!("item `{}` has no sentences", self.id),
            ));
        }
        if self.mc_question.options.is_empty() {
            return Err(Error::validation(
                "mc_question",
                format!("item `{}` has no options", self.id),
            ));
        }
        if self.mc_question.gold_index >= self.mc_question.options.len() {
            return Err(Error::validation(
                "mc_question",
                format!("item `{}` gold index out of range", self.id),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ImageOnly,
    TextOnly,
    ImagePlusText,
}

impl PromptMode {
    fn tag(self) -> &'static str {
        match self {
            PromptMode::ImageOnly => "image_only",
            PromptMode::TextOnly => "text_only",
            PromptMode::ImagePlusText => "image_plus_text",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionForm {
    MultipleChoice,
    OpenEnded,
}

impl QuestionForm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(QuestionForm::MultipleChoice),
            "open" => Ok(QuestionForm::OpenEnded),
            other => Err(Error::validation("form", format!("expected `mc` or `open`, got `{other}`"))),
        }
    }
}

/// Add i.i.d. Gaussian noise (std `sigma`, 8-bit pixel units) to every
/// channel, rounding and clamping to [0, 255]. `sigma = 0` returns the
/// input bit-exactly; the generator is fully seeded.
pub fn add_gaussian_noise(image: &DynamicImage, sigma: f64, seed: u64) -> Result<DynamicImage> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let mut perturb = |data: &mut [u8]| {
        for v in data.iter_mut() {
            let noise: f64 = normal.sample(&mut rng);
            *v = (f64::from(*v) + noise).round().clamp(0.0, 255.0) as u8;
        }
    };
    match image {
        DynamicImage::ImageLuma8(buf) => {
            let mut buf = buf.clone();
            perturb(buf.as_mut());
            Ok(DynamicImage::ImageLuma8(buf))
        }
        DynamicImage::ImageLumaA8(buf) => {
            let mut buf = buf.clone();
            perturb(buf.as_mut());
            Ok(DynamicImage::ImageLumaA8(buf))
        }
        DynamicImage::ImageRgb8(buf) => {
            let mut buf = buf.clone();
            perturb(buf.as_mut());
            Ok(DynamicImage::ImageRgb8(buf))
        }
        DynamicImage::ImageRgba8(buf) => {
            let mut buf = buf.clone();
            perturb(buf.as_mut());
            Ok(DynamicImage::ImageRgba8(buf))
        }
        other => Err(Error::validation(
            "image",
            format!("unsupported pixel format {:?}; 8-bit channels required", other.color()),
        )),
    }
}

/// Deterministic prompt template: first `k` sentences in original order,
/// then the question (plus an options block for multiple choice).
/// `image_plus_text` with `k = 0` degenerates to the `image_only` payload.
pub fn compose_prompt(
    item: &FusionItem,
    k: usize,
    mode: PromptMode,
    form: QuestionForm,
) -> Result<PromptPayload> {
    let m = item.sentence_count();
    if k > m {
        return Err(Error::Domain(format!("k = {k} out of range for {m} sentences")));
    }
    if mode == PromptMode::TextOnly && k == 0 {
        return Err(Error::Domain("text_only needs at least one sentence (k >= 1)".into()));
    }
    let effective_mode = if mode == PromptMode::ImagePlusText && k == 0 {
        PromptMode::ImageOnly
    } else {
        mode
    };

    let mut text = String::new();
    if k >= 1 {
        text.push_str(&item.description_sentences[..k].join(" "));
        text.push_str("\n\n");
    }
    match form {
        QuestionForm::MultipleChoice => {
            text.push_str(&format!("Question: {}", item.mc_question.question));
            for (i, option) in item.mc_question.options.iter().enumerate() {
                text.push_str(&format!("\n{}. {}", option_letter(i), option));
            }
        }
        QuestionForm::OpenEnded => {
            text.push_str(&format!("Question: {}", item.open_question.question));
        }
    }

    let mut payload = PromptPayload::text(text)
        .with_meta("item_id", &item.id)
        .with_meta("k", k)
        .with_meta("mode", effective_mode.tag());
    payload = match form {
        QuestionForm::MultipleChoice => payload.with_meta("gold_index", item.mc_question.gold_index),
        QuestionForm::OpenEnded => payload.with_meta("gold_text", &item.open_question.gold),
    };
    Ok(payload)
}

/// One (sigma, k) cell. Means are `None` when the cell is incomplete —
/// failed items are flagged, never silently averaged away.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub sigma: f64,
    pub k: usize,
    pub mean_confidence: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub n_items: usize,
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub sigmas: Vec<f64>,
    pub k_values: Vec<usize>,
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, sigma: f64, k: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.sigma == sigma && c.k == k)
    }
}

/// Raw per-item measurement behind a grid cell; persisted for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRawRow {
    pub item_id: String,
    pub sigma: f64,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    pub prompt_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub mode: PromptMode,
    /// Samples per open-ended cell (the IDK trial count by default).
    pub samples_per_cell: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_retries: u32,
    /// Base directory for relative image refs.
    pub image_root: Option<PathBuf>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            mode: PromptMode::ImagePlusText,
            samples_per_cell: 10,
            temperature: 1.0,
            top_p: 0.95,
            max_retries: 2,
            image_root: None,
        }
    }
}

fn resolve_image(image_ref: &str, root: Option<&Path>) -> PathBuf {
    let path = PathBuf::from(image_ref);
    match root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path,
    }
}

fn encode_png(image: &DynamicImage) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    image
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Numeric(format!("png encode: {e}")))?;
    Ok(bytes)
}

/// Run the full sigma-by-k grid. Per-item noise seeds derive from
/// (item id, sigma), so reruns are reproducible without storing images.
pub fn run_sweep(
    items: &[FusionItem],
    sigmas: &[f64],
    client: &dyn ModelClient,
    form: QuestionForm,
    options: &SweepOptions,
) -> Result<(SweepGrid, Vec<SweepRawRow>)> {
    if items.is_empty() {
        return Err(Error::EmptyInput("run_sweep"));
    }
    if sigmas.is_empty() {
        return Err(Error::EmptyInput("sigmas"));
    }
    for item in items {
        item.validate()?;
    }
    let m = items[0].sentence_count();
    if let Some(odd) = items.iter().find(|i| i.sentence_count() != m) {
        return Err(Error::validation(
            "description_sentences",
            format!("item `{}` has {} sentences, expected {m} (uniform m required)", odd.id, odd.sentence_count()),
        ));
    }
    let mut sigmas: Vec<f64> = sigmas.to_vec();
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::Domain("sigmas must be finite and >= 0".into()));
    }
    sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sigmas.dedup();
    // text_only has no k = 0 condition
    let k_start = usize::from(options.mode == PromptMode::TextOnly);
    let k_values: Vec<usize> = (k_start..=m).collect();

    let needs_image = options.mode != PromptMode::TextOnly;
    let mut rows: Vec<SweepRawRow> = items
        .par_iter()
        .map(|item| sweep_item(item, &sigmas, &k_values, client, form, options, needs_image))
        .collect::<Result<Vec<Vec<SweepRawRow>>>>()?
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| {
        a.item_id
            .cmp(&b.item_id)
            .then(a.sigma.partial_cmp(&b.sigma).unwrap())
            .then(a.k.cmp(&b.k))
    });

    let mut cells = Vec::with_capacity(sigmas.len() * k_values.len());
    for &sigma in &sigmas {
        for &k in &k_values {
            let cell_rows: Vec<&SweepRawRow> = rows
                .iter()
                .filter(|r| r.sigma == sigma && r.k == k)
                .collect();
            let ok: Vec<&&SweepRawRow> = cell_rows.iter().filter(|r| r.error.is_none()).collect();
            let incomplete = ok.len() != items.len();
            let mean_of = |f: fn(&SweepRawRow) -> Option<f64>| -> Option<f64> {
                if incomplete {
                    return None;
                }
                let values: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                if values.len() == ok.len() {
                    Some(mean(&values))
                } else {
                    None
                }
            };
            cells.push(SweepCell {
                sigma,
                k,
                mean_confidence: mean_of(|r| r.confidence),
                mean_entropy: mean_of(|r| r.entropy),
                n_items: ok.len(),
                incomplete,
            });
        }
    }
    Ok((SweepGrid { sigmas, k_values, cells }, rows))
}

#[allow(clippy::too_many_arguments)]
fn sweep_item(
    item: &FusionItem,
    sigmas: &[f64],
    k_values: &[usize],
    client: &dyn ModelClient,
    form: QuestionForm,
    options: &SweepOptions,
    needs_image: bool,
) -> Result<Vec<SweepRawRow>> {
    let base_image = if needs_image {
        let path = resolve_image(&item.image_ref, options.image_root.as_deref());
        match image::open(&path) {
            Ok(img) => Ok(img),
            Err(e) => Err(format!("cannot open image {path:?}: {e}")),
        }
    } else {
        Err("no image in text_only mode".to_string())
    };

    let mut rows = Vec::with_capacity(sigmas.len() * k_values.len());
    for &sigma in sigmas {
        let attachment: Option<Vec<u8>> = match (&base_image, needs_image) {
            (Ok(img), true) => {
                let noisy = add_gaussian_noise(img, sigma, stable_seed(&item.id, sigma))?;
                Some(encode_png(&noisy)?)
            }
            _ => None,
        };
        for &k in k_values {
            let mut payload = compose_prompt(item, k, options.mode, form)?.with_meta("sigma", sigma);
            if needs_image {
                match (&attachment, &base_image) {
                    (Some(bytes), _) => payload = payload.with_image("png", bytes.clone()),
                    (None, Err(reason)) => {
                        rows.push(SweepRawRow {
                            item_id: item.id.clone(),
                            sigma,
                            k,
                            confidence: None,
                            entropy: None,
                            prompt_text: payload.text,
                            error: Some(reason.clone()),
                        });
                        continue;
                    }
                    (None, Ok(_)) => unreachable!("attachment exists when image decoded"),
                }
            }
            let row = measure_cell(item, &payload, sigma, k, client, form, options);
            rows.push(row);
        }
    }
    Ok(rows)
}

fn measure_cell(
    item: &FusionItem,
    payload: &PromptPayload,
    sigma: f64,
    k: usize,
    client: &dyn ModelClient,
    form: QuestionForm,
    options: &SweepOptions,
) -> SweepRawRow {
    let mut row = SweepRawRow {
        item_id: item.id.clone(),
        sigma,
        k,
        confidence: None,
        entropy: None,
        prompt_text: payload.text.clone(),
        error: None,
    };
    match form {
        QuestionForm::MultipleChoice => {
            let result = with_retries(options.max_retries, || {
                client.query_options(payload, &item.mc_question.options)
            });
            match result.map_err(Error::from).and_then(|l| confidence_of(&l)) {
                Ok((confidence, _)) => row.confidence = Some(confidence),
                Err(e) => row.error = Some(e.to_string()),
            }
        }
        QuestionForm::OpenEnded => {
            let result = with_retries(options.max_retries, || {
                client.sample_answers(payload, options.samples_per_cell, options.temperature, options.top_p)
            });
            let entropy = result.map_err(Error::from).and_then(|samples| {
                cluster_samples(&samples, &EquivalenceJudge::NormalizedExact).map(|p| semantic_entropy(&p))
            });
            match entropy {
                Ok(h) => row.entropy = Some(h),
                Err(e) => row.error = Some(e.to_string()),
            }
        }
    }
    row
}

// ─── CSV surface ─────────────────────────────────────────────────────────────

/// One row per (sigma, k): sigma, k, mean_confidence, mean_entropy,
/// n_items, incomplete. Sigma ordering ascending.
pub fn export_curves(grid: &SweepGrid) -> String {
    let mut out = String::from("sigma,k,mean_confidence,mean_entropy,n_items,incomplete\n");
    for cell in &grid.cells {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.sigma,
            cell.k,
            fmt(cell.mean_confidence),
            fmt(cell.mean_entropy),
            cell.n_items,
            cell.incomplete
        ));
    }
    out
}

/// Inverse of [`export_curves`]; round-trips a grid exactly.
pub fn parse_curves(csv_text: &str) -> Result<SweepGrid> {
    let mut reader = csv::ReaderBuilder::new().from_reader(csv_text.as_bytes());
    let mut cells = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let opt = |i: usize| -> Result<Option<f64>> {
            let raw = field(i);
            if raw.is_empty() {
                Ok(None)
            } else {
                raw.parse()
                    .map(Some)
                    .map_err(|_| Error::Parse { line: 0, message: format!("bad number `{raw}`") })
            }
        };
        cells.push(SweepCell {
            sigma: field(0)
                .parse()
                .map_err(|_| Error::Parse { line: 0, message: format!("bad sigma `{}`", field(0)) })?,
            k: field(1)
                .parse()
                .map_err(|_| Error::Parse { line: 0, message: format!("bad k `{}`", field(1)) })?,
            mean_confidence: opt(2)?,
            mean_entropy: opt(3)?,
            n_items: field(4)
                .parse()
                .map_err(|_| Error::Parse { line: 0, message: format!("bad count `{}`", field(4)) })?,
            incomplete: field(5) == "true",
        });
    }
    if cells.is_empty() {
        return Err(Error::EmptyInput("parse_curves"));
    }
    let mut sigmas: Vec<f64> = cells.iter().map(|c| c.sigma).collect();
    sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sigmas.dedup();
    let mut k_values: Vec<usize> = cells.iter().map(|c| c.k).collect();
    k_values.sort_unstable();
    k_values.dedup();
    Ok(SweepGrid { sigmas, k_values, cells })
}

/// Read fusion items from JSONL.
pub fn read_items(path: impl AsRef<Path>) -> Result<Vec<FusionItem>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: FusionItem = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        item.validate()?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(Error::EmptyDataset { path: path.to_path_buf() });
    }
    Ok(items)
}

/// Persist raw rows as JSONL (already sorted by item id).
pub fn write_raw_rows(path: impl AsRef<Path>, rows: &[SweepRawRow]) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(file, "{}", serde_json::to_string(row).expect("raw row serializes"))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
