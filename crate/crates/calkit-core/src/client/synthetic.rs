//! Synthetic calibrated-model simulator.
//!
//! Draws a target confidence `c`, emits logits whose max-softmax equals `c`
//! exactly, and places the gold option on top with probability `g(c)`. With
//! `g = identity` the simulator is perfectly calibrated by construction,
//! which makes it the ground-truth oracle for the metric and temperature
//! pipelines. `scale` multiplies the emitted logits, so dividing by
//! `T = scale` restores the calibrated confidences.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClientError, ClientParams, ClientResult, ModelClient, PromptPayload};
use crate::error::{Error, Result};
use crate::record::{option_letter, ResponseRecord};

/// Accuracy-given-confidence function family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccuracyFn {
    Identity,
    Power { alpha: f64 },
    Affine { a: f64, b: f64 },
}

impl AccuracyFn {
    /// g(c), clamped to [0, 1].
    pub fn eval(&self, c: f64) -> f64 {
        let raw = match self {
            AccuracyFn::Identity => c,
            AccuracyFn::Power { alpha } => c.powf(*alpha),
            AccuracyFn::Affine { a, b } => a * c + b,
        };
        raw.clamp(0.0, 1.0)
    }
}

/// Distribution of the target confidence; support must stay in (1/K, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceDist {
    Uniform { lo: f64, hi: f64 },
}

impl ConfidenceDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let c = match self {
            ConfidenceDist::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
        };
        // c = 1 exactly has no finite-logit representation
        c.min(1.0 - 1e-12)
    }

    fn support(&self) -> (f64, f64) {
        match self {
            ConfidenceDist::Uniform { lo, hi } => (*lo, *hi),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticModelSpec {
    pub option_count: usize,
    pub accuracy_fn: AccuracyFn,
    pub confidence_dist: ConfidenceDist,
    pub seed: u64,
}

impl SyntheticModelSpec {
    fn validate(&self) -> ClientResult<()> {
        if self.option_count == 0 {
            return Err(ClientError::Config("option_count must be >= 1".into()));
        }
        let (lo, hi) = self.confidence_dist.support();
        let floor = 1.0 / self.option_count as f64;
        if !(lo > floor && hi <= 1.0 && lo <= hi) {
            return Err(ClientError::Config(format!(
                "confidence support ({lo}, {hi}] must lie within (1/K, 1] = ({floor}, 1]"
            )));
        }
        Ok(())
    }
}

/// Logits with max-softmax exactly `c`: top gets ln(c), the rest get
/// ln((1-c)/(K-1)). `K = 1` degenerates to a single zero logit.
fn calibrated_logits(c: f64, k: usize, top: usize, scale: f64) -> Vec<f64> {
    if k == 1 {
        return vec![0.0];
    }
    let rest = ((1.0 - c) / (k - 1) as f64).ln();
    (0..k)
        .map(|i| if i == top { c.ln() * scale } else { rest * scale })
        .collect()
}

pub struct SyntheticModel {
    spec: SyntheticModelSpec,
    scale: f64,
    label: String,
    rng: Mutex<ChaCha8Rng>,
}

impl SyntheticModel {
    pub fn new(spec: SyntheticModelSpec) -> ClientResult<Self> {
        Self::scaled(spec, 1.0)
    }

    /// As [`SyntheticModel::new`] but emitted logits are multiplied by `s`.
    pub fn scaled(spec: SyntheticModelSpec, s: f64) -> ClientResult<Self> {
        spec.validate()?;
        if !(s.is_finite() && s > 0.0) {
            return Err(ClientError::Config(format!("scale must be > 0, got {s}")));
        }
        let rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let label = if (s - 1.0).abs() < f64::EPSILON {
            "synthetic".to_string()
        } else {
            format!("scaled-synthetic(s={s})")
        };
        Ok(Self { spec, scale: s, label, rng: Mutex::new(rng) })
    }

    fn draw(&self, gold: usize, k: usize) -> Vec<f64> {
        let mut rng = self.rng.lock().unwrap();
        draw_logits(&self.spec, self.scale, gold, k, &mut rng)
    }
}

fn draw_logits(
    spec: &SyntheticModelSpec,
    scale: f64,
    gold: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let c = spec.confidence_dist.sample(rng);
    let correct = rng.random_bool(spec.accuracy_fn.eval(c));
    let top = if correct || k == 1 {
        gold
    } else {
        // uniform among the K-1 non-gold options
        let mut pick = rng.random_range(0..k - 1);
        if pick >= gold {
            pick += 1;
        }
        pick
    };
    calibrated_logits(c, k, top, scale)
}

impl ModelClient for SyntheticModel {
    fn name(&self) -> &str {
        &self.label
    }

    fn query_options(&self, prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>> {
        if options.len() != self.spec.option_count {
            return Err(ClientError::Config(format!(
                "synthetic model configured for K={}, asked for K={}",
                self.spec.option_count,
                options.len()
            )));
        }
        // gold index rides in the payload meta; defaults to 0 for dataset-free probes
        let gold = prompt.meta_usize("gold_index").unwrap_or(0);
        if gold >= options.len() {
            return Err(ClientError::Config(format!(
                "gold_index {gold} out of range for {} options",
                options.len()
            )));
        }
        Ok(self.draw(gold, options.len()))
    }

    fn sample_answers(
        &self,
        prompt: &PromptPayload,
        n: usize,
        _temperature: f64,
        _top_p: f64,
    ) -> ClientResult<Vec<String>> {
        // sample option letters from the calibrated distribution
        let k = self.spec.option_count;
        let gold = prompt.meta_usize("gold_index").unwrap_or(0);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let logits = self.draw(gold, k);
            let probs = crate::util::softmax(&logits);
            let mut rng = self.rng.lock().unwrap();
            let roll: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut choice = k - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if roll < acc {
                    choice = i;
                    break;
                }
            }
            out.push(option_letter(choice));
        }
        Ok(out)
    }
}

/// Generate `n` labeled records straight from the simulator: a calibrated
/// dataset with a known accuracy-given-confidence law, emitted sequentially
/// from one seeded stream.
pub fn generate_records(spec: &SyntheticModelSpec, scale: f64, n: usize) -> Result<Vec<ResponseRecord>> {
    spec.validate().map_err(Error::Client)?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Domain(format!("scale must be > 0, got {scale}")));
    }
    let k = spec.option_count;
    let options: Vec<String> = (0..k).map(|i| format!("option {}", option_letter(i))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let gold = rng.random_range(0..k);
        let logits = draw_logits(spec, scale, gold, k, &mut rng);
        records.push(ResponseRecord {
            id: format!("syn-{i:06}"),
            question: format!("synthetic question {i}"),
            options: Some(options.clone()),
            gold_index: Some(gold),
            image_ref: None,
            description_sentences: None,
            option_logits: Some(logits),
            samples: None,
            model_id: "synthetic".into(),
            condition: None,
            extra: serde_json::Map::new(),
        });
    }
    Ok(records)
}

fn spec_from_params(params: &ClientParams) -> ClientResult<SyntheticModelSpec> {
    let option_count = params.get_u64("k")?.unwrap_or(4) as usize;
    let accuracy_fn = match params.get("g").unwrap_or("identity") {
        "identity" => AccuracyFn::Identity,
        "power" => AccuracyFn::Power { alpha: params.get_f64("alpha")?.unwrap_or(2.0) },
        "affine" => AccuracyFn::Affine {
            a: params.get_f64("a")?.unwrap_or(1.0),
            b: params.get_f64("b")?.unwrap_or(0.0),
        },
        other => return Err(ClientError::Config(format!("unknown accuracy fn `{other}`"))),
    };
    let floor = 1.0 / option_count.max(1) as f64;
    let lo = params.get_f64("lo")?.unwrap_or((floor + 1e-6).min(1.0));
    let hi = params.get_f64("hi")?.unwrap_or(1.0);
    Ok(SyntheticModelSpec {
        option_count,
        accuracy_fn,
        confidence_dist: ConfidenceDist::Uniform { lo, hi },
        seed: params.get_u64("seed")?.unwrap_or(0),
    })
}

pub fn from_params(params: &ClientParams) -> ClientResult<Box<dyn ModelClient>> {
    Ok(Box::new(SyntheticModel::new(spec_from_params(params)?)?))
}

pub fn scaled_from_params(params: &ClientParams) -> ClientResult<Box<dyn ModelClient>> {
    let s = params.get_f64("s")?.unwrap_or(1.0);
    Ok(Box::new(SyntheticModel::scaled(spec_from_params(params)?, s)?))
}
