//! Iterative prompt-suffix search scored by accuracy bands, then ECE.
//!
//! Each iteration paraphrases the current prompt set, evaluates the new
//! suffixes on a fixed record set, keeps the top k by band-then-ECE rank,
//! and tracks the best suffix ever seen. Evaluations are cached by
//! (suffix, dataset fingerprint) so no suffix hits the model twice.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{ModelClient, PromptPayload};
use crate::error::{Error, Result};
use crate::metrics::{confidence_of, summarize_points, BinScheme, PredictionPoint};
use crate::record::ResponseRecord;
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffixCandidate {
    pub text: String,
    pub accuracy: f64,
    pub ece: f64,
    /// Iteration that produced it; 0 for seeds.
    pub generation: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptParams {
    pub top_k: usize,
    /// Paraphrases requested per prompt per iteration (m).
    pub variants_per_prompt: usize,
    pub iterations: usize,
    pub band_width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best: SuffixCandidate,
    pub top: Vec<SuffixCandidate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptState {
    /// Current prompt set G.
    pub pool: Vec<SuffixCandidate>,
    pub best: SuffixCandidate,
    pub history: Vec<IterationRecord>,
    pub params: OptParams,
    /// Set when the loop aborted early (all evaluations failed); history up
    /// to that point is preserved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted_at: Option<usize>,
}

/// Dedup key for suffixes: lowercased, whitespace-collapsed.
pub fn normalize_suffix(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn band_index(accuracy: f64, band_width: f64) -> i64 {
    (accuracy / band_width).floor() as i64
}

/// Higher accuracy band first, lower ECE within a band, suffix text as the
/// final deterministic tiebreak.
fn compare(a: &SuffixCandidate, b: &SuffixCandidate, band_width: f64) -> Ordering {
    band_index(b.accuracy, band_width)
        .cmp(&band_index(a.accuracy, band_width))
        .then(a.ece.partial_cmp(&b.ece).unwrap_or(Ordering::Equal))
        .then(a.text.cmp(&b.text))
}

/// Strict metric comparison (band, then ECE) without the text tiebreak;
/// used so an equal challenger never displaces the incumbent best.
fn strictly_better(challenger: &SuffixCandidate, incumbent: &SuffixCandidate, band_width: f64) -> bool {
    let challenger_key = (band_index(challenger.accuracy, band_width), challenger.ece);
    let incumbent_key = (band_index(incumbent.accuracy, band_width), incumbent.ece);
    challenger_key.0 > incumbent_key.0
        || (challenger_key.0 == incumbent_key.0 && challenger_key.1 < incumbent_key.1)
}

/// Sort candidates by band-descending, ECE-ascending, text.
pub fn rank_candidates(candidates: &[SuffixCandidate], band_width: f64) -> Result<Vec<SuffixCandidate>> {
    if !(band_width.is_finite() && band_width > 0.0) {
        return Err(Error::Domain(format!("band_width must be > 0, got {band_width}")));
    }
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| compare(a, b, band_width));
    Ok(ranked)
}

/// Ask the generator for up to `m` novel paraphrases of `suffix`,
/// deduplicated against `seen` (normalized) and within the batch.
pub fn generate_variants(
    suffix: &str,
    m: usize,
    generator: &dyn ModelClient,
    seen: &HashSet<String>,
) -> Result<Vec<String>> {
    if m == 0 {
        return Err(Error::Domain("m must be >= 1".into()));
    }
    let payload = PromptPayload::text(format!(
        "Rewrite the following answer-prompt suffix in {m} different ways. Keep the meaning, \
         vary the wording, and return one variant per line with no numbering.\nSuffix: {suffix}"
    ))
    .with_meta("suffix", suffix);
    let raw = generator.sample_answers(&payload, m, 0.9, 0.95)?;

    let mut batch_seen = HashSet::new();
    let mut variants = Vec::new();
    for completion in raw {
        let candidate = completion.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
        if candidate.is_empty() {
            continue;
        }
        let key = normalize_suffix(candidate);
        if key.is_empty() || seen.contains(&key) || !batch_seen.insert(key) {
            continue;
        }
        variants.push(candidate.to_string());
        if variants.len() == m {
            break;
        }
    }
    Ok(variants)
}

/// Cached evaluator bound to one record set and one backend.
pub struct SuffixEvaluator<'a> {
    records: &'a [ResponseRecord],
    client: &'a dyn ModelClient,
    fingerprint: String,
    cache: HashMap<String, (f64, f64)>,
    m_bins: usize,
}

impl<'a> SuffixEvaluator<'a> {
    pub fn new(records: &'a [ResponseRecord], client: &'a dyn ModelClient) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("suffix evaluator"));
        }
        for record in records {
            if record.options.is_none() || record.gold_index.is_none() {
                return Err(Error::validation(
                    "records",
                    format!("record `{}` needs options and gold_index for suffix evaluation", record.id),
                ));
            }
        }
        let mut digest_input = String::new();
        for record in records {
            digest_input.push_str(&record.to_jsonl());
            digest_input.push('\n');
        }
        Ok(Self {
            records,
            client,
            fingerprint: sha256_hex(digest_input.as_bytes()),
            cache: HashMap::new(),
            m_bins: 10,
        })
    }

    /// Content hash of the evaluation set; the cache key is
    /// (suffix, this fingerprint).
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// (accuracy, ECE) of the records when `suffix` is appended to every
    /// prompt. Cache hits issue zero client calls.
    pub fn evaluate(&mut self, suffix: &str) -> Result<(f64, f64)> {
        if let Some(&hit) = self.cache.get(suffix) {
            return Ok(hit);
        }
        let outcomes: Vec<Result<PredictionPoint>> = self
            .records
            .par_iter()
            .enumerate()
            .map(|(index, record)| {
                let mut payload = PromptPayload::for_record(record)
                    .with_meta("suffix", suffix)
                    .with_meta("record_index", index);
                payload.text.push('\n');
                payload.text.push_str(suffix);
                let options = record.options.as_ref().expect("validated in new");
                let gold = record.gold_index.expect("validated in new");
                let logits = self.client.query_options(&payload, options)?;
                let (confidence, predicted) = confidence_of(&logits)?;
                PredictionPoint::new(confidence, predicted == gold)
            })
            .collect();
        let points: Vec<PredictionPoint> = outcomes.into_iter().collect::<Result<_>>()?;
        let summary = summarize_points(&points, self.m_bins, BinScheme::EqualWidth)?;
        let result = (summary.accuracy, summary.ece);
        self.cache.insert(suffix.to_string(), result);
        Ok(result)
    }
}

/// The full search loop.
///
/// Seeds are evaluated up front; each iteration paraphrases the pool,
/// evaluates what is novel, and keeps the top k. An iteration with no
/// novel variants re-ranks the already-evaluated pool instead. Candidates
/// whose evaluation fails are excluded from ranking that iteration; if
/// every evaluation in an iteration fails the loop aborts with history
/// preserved in the returned state.
pub fn optimize(
    seeds: &[String],
    params: OptParams,
    records: &[ResponseRecord],
    model: &dyn ModelClient,
    generator: &dyn ModelClient,
) -> Result<OptState> {
    if seeds.is_empty() {
        return Err(Error::EmptyInput("seeds"));
    }
    if params.top_k == 0 || params.variants_per_prompt == 0 || params.iterations == 0 {
        return Err(Error::Domain("k, m, and n must all be >= 1".into()));
    }
    if !(params.band_width.is_finite() && params.band_width > 0.0) {
        return Err(Error::Domain("band_width must be > 0".into()));
    }

    let mut evaluator = SuffixEvaluator::new(records, model)?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut evaluated: Vec<SuffixCandidate> = Vec::new();

    for seed in seeds {
        let key = normalize_suffix(seed);
        if key.is_empty() || !seen.insert(key) {
            continue;
        }
        match evaluator.evaluate(seed) {
            Ok((accuracy, ece)) => evaluated.push(SuffixCandidate {
                text: seed.clone(),
                accuracy,
                ece,
                generation: 0,
                parent: None,
            }),
            Err(Error::Client(_)) => continue,
            Err(other) => return Err(other),
        }
    }
    if evaluated.is_empty() {
        return Err(Error::Incomplete("no seed survived evaluation".into()));
    }

    let mut pool = rank_candidates(&evaluated, params.band_width)?;
    let mut best = pool[0].clone();
    let mut history = Vec::with_capacity(params.iterations);

    for iteration in 1..=params.iterations {
        let mut novel: Vec<(String, String)> = Vec::new(); // (text, parent)
        for prompt in &pool {
            let variants = generate_variants(&prompt.text, params.variants_per_prompt, generator, &seen)?;
            for variant in variants {
                seen.insert(normalize_suffix(&variant));
                novel.push((variant, prompt.text.clone()));
            }
        }

        let ranked = if novel.is_empty() {
            // generation drought: proceed with the re-ranked existing pool
            rank_candidates(&evaluated, params.band_width)?
        } else {
            let mut fresh = Vec::new();
            let mut failures = 0usize;
            for (text, parent) in &novel {
                match evaluator.evaluate(text) {
                    Ok((accuracy, ece)) => fresh.push(SuffixCandidate {
                        text: text.clone(),
                        accuracy,
                        ece,
                        generation: iteration,
                        parent: Some(parent.clone()),
                    }),
                    Err(Error::Client(_)) => failures += 1,
                    Err(other) => return Err(other),
                }
            }
            if fresh.is_empty() && failures > 0 {
                return Ok(OptState {
                    pool,
                    best,
                    history,
                    params,
                    aborted_at: Some(iteration),
                });
            }
            evaluated.extend(fresh.iter().cloned());
            rank_candidates(&fresh, params.band_width)?
        };

        pool = ranked.into_iter().take(params.top_k).collect();
        for candidate in &pool {
            if strictly_better(candidate, &best, params.band_width) {
                best = candidate.clone();
            }
        }
        // a candidate outside the kept top-k can still be the global best
        for candidate in &evaluated {
            if strictly_better(candidate, &best, params.band_width) {
                best = candidate.clone();
            }
        }
        history.push(IterationRecord { iteration, best: best.clone(), top: pool.clone() });
    }

    Ok(OptState { pool, best, history, params, aborted_at: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::mock::{CountingClient, FnClient};
    use crate::client::ClientResult;
    use std::sync::Arc;

    fn eval_records(n: usize) -> Vec<ResponseRecord> {
        (0..n)
            .map(|i| {
                crate::record::parse_record(&format!(
                    r#"{{"id":"e{i:03}","question":"?","options":["a","b","c","d"],"gold_index":{},"option_logits":[0.0,0.0,0.0,0.0],"model_id":"m"}}"#,
                    i % 4
                ))
                .unwrap()
            })
            .collect()
    }

    fn candidate(text: &str, accuracy: f64, ece: f64) -> SuffixCandidate {
        SuffixCandidate { text: text.into(), accuracy, ece, generation: 0, parent: None }
    }

    /// Backend whose (accuracy, ece) depend only on the suffix, via a table.
    fn table_client(table: HashMap<String, (f64, f64)>) -> FnClient {
        FnClient::options_only("table", move |payload, options| -> ClientResult<Vec<f64>> {
            let suffix = payload.meta.get("suffix").cloned().unwrap_or_default();
            let &(accuracy, ece) = table
                .get(&suffix)
                .unwrap_or_else(|| panic!("unexpected suffix `{suffix}`"));
            let index: usize = payload.meta.get("record_index").unwrap().parse().unwrap();
            let gold: usize = payload.meta.get("gold_index").unwrap().parse().unwrap();
            let n = 100usize; // matches eval_records(100)
            let correct = index < (accuracy * n as f64).round() as usize;
            let confidence = accuracy - ece; // all mass in one bin => ECE = |acc - conf|
            let k = options.len();
            let rest = ((1.0 - confidence) / (k - 1) as f64).ln();
            let top = if correct { gold } else { (gold + 1) % k };
            Ok((0..k).map(|i| if i == top { confidence.ln() } else { rest }).collect())
        })
    }

    /// Paraphrase graph keyed by the suffix under rewrite.
    fn graph_generator(graph: HashMap<String, Vec<String>>) -> FnClient {
        FnClient::samples_only("graph", move |payload, n| {
            let suffix = payload.meta.get("suffix").cloned().unwrap_or_default();
            let children = graph.get(&suffix).cloned().unwrap_or_default();
            Ok(children.into_iter().take(n).collect())
        })
    }

    #[test]
    fn ranking_hand_example() {
        let candidates = vec![
            candidate("s81", 0.81, 0.10),
            candidate("s80", 0.80, 0.04),
            candidate("s76", 0.76, 0.01),
        ];
        let ranked = rank_candidates(&candidates, 0.02).unwrap();
        let order: Vec<&str> = ranked.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(order, vec!["s80", "s81", "s76"]);
    }

    #[test]
    fn ranking_single_and_ties() {
        let single = vec![candidate("only", 0.5, 0.2)];
        assert_eq!(rank_candidates(&single, 0.02).unwrap()[0].text, "only");

        let tied = vec![candidate("zeta", 0.5, 0.1), candidate("alpha", 0.5, 0.1)];
        let ranked = rank_candidates(&tied, 0.02).unwrap();
        assert_eq!(ranked[0].text, "alpha");
    }

    #[test]
    fn variants_dedup_against_seen() {
        let generator = FnClient::samples_only("gen", |_, n| {
            Ok((0..n).map(|i| ["One.", "Two.", "Three."][i % 3].to_string()).collect())
        });
        let seen = HashSet::new();
        let variants = generate_variants("seed", 5, &generator, &seen).unwrap();
        assert_eq!(variants.len(), 3); // cycles collapse

        let all_seen: HashSet<String> =
            ["one.", "two.", "three."].iter().map(|s| s.to_string()).collect();
        let none = generate_variants("seed", 5, &generator, &all_seen).unwrap();
        assert!(none.is_empty());

        let one = generate_variants("seed", 1, &generator, &HashSet::new()).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn evaluator_caches_by_suffix() {
        let records = eval_records(100);
        let mut table = HashMap::new();
        table.insert("Answer:".to_string(), (0.8, 0.04));
        let client = CountingClient::new(table_client(table));
        let mut evaluator = SuffixEvaluator::new(&records, &client).unwrap();

        let first = evaluator.evaluate("Answer:").unwrap();
        let calls_after_first = client.options_seen();
        assert_eq!(calls_after_first, 100);
        let second = evaluator.evaluate("Answer:").unwrap();
        assert_eq!(client.options_seen(), calls_after_first); // cache hit: zero new calls
        assert_eq!(first, second);
    }

    #[test]
    fn evaluator_reproduces_table_metrics() {
        let records = eval_records(100);
        let mut table = HashMap::new();
        table.insert("Answer:".to_string(), (0.8, 0.04));
        table.insert("Maybe:".to_string(), (0.8, 0.10));
        let client = table_client(table);
        let mut evaluator = SuffixEvaluator::new(&records, &client).unwrap();

        let (acc_a, ece_a) = evaluator.evaluate("Answer:").unwrap();
        assert!((acc_a - 0.8).abs() < 1e-12);
        assert!((ece_a - 0.04).abs() < 1e-9);
        let (_, ece_b) = evaluator.evaluate("Maybe:").unwrap();
        assert!(ece_b > ece_a); // sharpness differs by suffix keyword
    }

    #[test]
    fn suffix_invariant_model_gives_identical_metrics() {
        let records = eval_records(100);
        let client = FnClient::options_only("flat", |payload, options| {
            let gold: usize = payload.meta.get("gold_index").unwrap().parse().unwrap();
            let mut logits = vec![0.0; options.len()];
            logits[gold] = 1.0;
            Ok(logits)
        });
        let mut evaluator = SuffixEvaluator::new(&records, &client).unwrap();
        let a = evaluator.evaluate("Answer:").unwrap();
        let b = evaluator.evaluate("This answer might be:").unwrap();
        assert_eq!(a, b);
    }

    fn two_hop_setup() -> (HashMap<String, (f64, f64)>, HashMap<String, Vec<String>>) {
        let mut table = HashMap::new();
        table.insert("Answer:".into(), (0.80, 0.20));
        table.insert("The answer is:".into(), (0.80, 0.12));
        table.insert("Answer now:".into(), (0.78, 0.18));
        table.insert("This answer might be:".into(), (0.80, 0.02)); // optimum, 2 hops
        table.insert("Possibly:".into(), (0.80, 0.15));
        let mut graph: HashMap<String, Vec<String>> = HashMap::new();
        graph.insert("Answer:".into(), vec!["The answer is:".into(), "Answer now:".into()]);
        graph.insert("The answer is:".into(), vec!["This answer might be:".into(), "Possibly:".into()]);
        (table, graph)
    }

    #[test]
    fn finds_optimum_two_hops_away() {
        let records = eval_records(100);
        let (table, graph) = two_hop_setup();
        let model = table_client(table);
        let generator = graph_generator(graph);
        let params = OptParams { top_k: 3, variants_per_prompt: 3, iterations: 5, band_width: 0.02 };
        let state = optimize(
            &["Answer:".to_string()],
            params,
            &records,
            &model,
            &generator,
        )
        .unwrap();
        assert_eq!(state.best.text, "This answer might be:");
        assert!(state.aborted_at.is_none());
        // best metrics never worsen across the history
        let mut last = (i64::MIN, f64::INFINITY);
        for entry in &state.history {
            let key = (band_index(entry.best.accuracy, 0.02), entry.best.ece);
            assert!(
                key.0 > last.0 || (key.0 == last.0 && key.1 <= last.1),
                "best worsened: {last:?} -> {key:?}"
            );
            last = key;
        }
        assert_eq!(state.history.len(), 5);
    }

    #[test]
    fn drought_keeps_best_seed() {
        let records = eval_records(100);
        let mut table = HashMap::new();
        table.insert("B seed".to_string(), (0.8, 0.04));
        table.insert("A seed".to_string(), (0.8, 0.04));
        let model = table_client(table);
        let generator = FnClient::samples_only("empty", |_, _| Ok(vec![]));
        let params = OptParams { top_k: 2, variants_per_prompt: 3, iterations: 1, band_width: 0.02 };
        let state = optimize(
            &["B seed".to_string(), "A seed".to_string()],
            params,
            &records,
            &model,
            &generator,
        )
        .unwrap();
        // identical metrics: lexicographically-first seed wins and is never displaced
        assert_eq!(state.best.text, "A seed");
        assert_eq!(state.history.len(), 1);
    }

    #[test]
    fn singleton_pool_with_k1() {
        let records = eval_records(100);
        let (table, graph) = two_hop_setup();
        let model = table_client(table);
        let generator = graph_generator(graph);
        let params = OptParams { top_k: 1, variants_per_prompt: 2, iterations: 3, band_width: 0.02 };
        let state = optimize(&["Answer:".to_string()], params, &records, &model, &generator).unwrap();
        for entry in &state.history {
            assert!(entry.top.len() <= 1);
        }
        assert_eq!(state.pool.len(), 1);
    }

    #[test]
    fn no_duplicate_model_queries_per_suffix() {
        let records = eval_records(100);
        let (table, mut graph) = two_hop_setup();
        // make the generator repeat earlier suffixes: dedup must absorb them
        graph.insert("This answer might be:".into(), vec!["Answer:".into(), "The answer is:".into()]);
        graph.insert("Possibly:".into(), vec!["Answer now:".into()]);
        let model = Arc::new(CountingClient::new(table_client(table)));
        let generator = graph_generator(graph);
        let params = OptParams { top_k: 3, variants_per_prompt: 3, iterations: 4, band_width: 0.02 };
        optimize(&["Answer:".to_string()], params, &records, &model.clone(), &generator).unwrap();
        // five distinct suffixes, 100 records each
        assert_eq!(model.options_seen(), 500);
    }

    #[test]
    fn all_failed_evaluations_abort_with_history() {
        let records = eval_records(100);
        let mut table = HashMap::new();
        table.insert("Answer:".to_string(), (0.8, 0.04));
        let model = FnClient::options_only("flaky", move |payload, options| {
            let suffix = payload.meta.get("suffix").cloned().unwrap_or_default();
            if suffix == "Answer:" {
                let gold: usize = payload.meta.get("gold_index").unwrap().parse().unwrap();
                let mut logits = vec![0.0; options.len()];
                logits[gold] = 1.0;
                Ok(logits)
            } else {
                Err(crate::client::ClientError::Transport { attempts: 1, message: "down".into() })
            }
        });
        let generator = FnClient::samples_only("gen", |_, _| Ok(vec!["Broken variant.".to_string()]));
        let params = OptParams { top_k: 2, variants_per_prompt: 1, iterations: 3, band_width: 0.02 };
        let state = optimize(&["Answer:".to_string()], params, &records, &model, &generator).unwrap();
        assert_eq!(state.aborted_at, Some(1));
        assert_eq!(state.best.text, "Answer:");
    }
}
