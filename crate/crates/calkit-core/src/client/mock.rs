//! Deterministic mock backends for tests and offline pipeline runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClientError, ClientParams, ClientResult, ModelClient, PromptPayload};
use crate::record::option_letter;

/// Always returns the same logits, truncated/padded checks aside.
pub struct FixedLogitsClient {
    pub logits: Vec<f64>,
}

impl ModelClient for FixedLogitsClient {
    fn name(&self) -> &str {
        "fixed"
    }

    fn query_options(&self, _prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>> {
        if options.len() != self.logits.len() {
            return Err(ClientError::Config(format!(
                "fixed client holds {} logits, asked for {}",
                self.logits.len(),
                options.len()
            )));
        }
        Ok(self.logits.clone())
    }

    fn sample_answers(
        &self,
        _prompt: &PromptPayload,
        n: usize,
        _temperature: f64,
        _top_p: f64,
    ) -> ClientResult<Vec<String>> {
        let top = crate::util::argmax(&self.logits);
        Ok(vec![option_letter(top); n])
    }
}

/// Repeats the prompt text back; handy for plumbing tests.
pub struct EchoClient;

impl ModelClient for EchoClient {
    fn name(&self) -> &str {
        "echo"
    }

    fn query_options(&self, _prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>> {
        Ok(vec![0.0; options.len()])
    }

    fn sample_answers(
        &self,
        prompt: &PromptPayload,
        n: usize,
        _temperature: f64,
        _top_p: f64,
    ) -> ClientResult<Vec<String>> {
        Ok(vec![prompt.text.clone(); n])
    }
}

/// Answers with the gold option letter with probability `p`, otherwise a
/// deterministic wrong letter. Gold comes from the payload meta. Each call
/// draws from an RNG derived from (record id, seed), so results do not
/// depend on call order across threads.
pub struct GoldAnswerClient {
    p: f64,
    option_count: usize,
    seed: u64,
}

impl GoldAnswerClient {
    pub fn new(p: f64, option_count: usize, seed: u64) -> ClientResult<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ClientError::Config(format!("p must be in [0,1], got {p}")));
        }
        if option_count == 0 {
            return Err(ClientError::Config("option_count must be >= 1".into()));
        }
        Ok(Self { p, option_count, seed })
    }
}

impl ModelClient for GoldAnswerClient {
    fn name(&self) -> &str {
        "gold"
    }

    fn query_options(&self, prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>> {
        let gold = prompt.meta_usize("gold_index").unwrap_or(0);
        let mut logits = vec![0.0; options.len()];
        if gold < logits.len() {
            logits[gold] = 1.0;
        }
        Ok(logits)
    }

    fn sample_answers(
        &self,
        prompt: &PromptPayload,
        n: usize,
        _temperature: f64,
        _top_p: f64,
    ) -> ClientResult<Vec<String>> {
        let gold = prompt.meta_usize("gold_index").unwrap_or(0);
        let wrong = if gold == 0 && self.option_count > 1 { 1 } else { 0 };
        let key = prompt.meta.get("record_id").map_or(prompt.text.as_str(), String::as_str);
        let mut rng = ChaCha8Rng::seed_from_u64(crate::util::stable_seed_with(key, self.seed));
        Ok((0..n)
            .map(|_| {
                if rng.random_bool(self.p) {
                    option_letter(gold)
                } else {
                    option_letter(wrong)
                }
            })
            .collect())
    }
}

/// Fails every call with a transport error.
pub struct FailingClient;

impl ModelClient for FailingClient {
    fn name(&self) -> &str {
        "failing"
    }

    fn query_options(&self, _prompt: &PromptPayload, _options: &[String]) -> ClientResult<Vec<f64>> {
        Err(ClientError::Transport { attempts: 1, message: "mock failure".into() })
    }

    fn sample_answers(
        &self,
        _prompt: &PromptPayload,
        _n: usize,
        _temperature: f64,
        _top_p: f64,
    ) -> ClientResult<Vec<String>> {
        Err(ClientError::Transport { attempts: 1, message: "mock failure".into() })
    }
}

type OptionsFn = dyn Fn(&PromptPayload, &[String]) -> ClientResult<Vec<f64>> + Send + Sync;
type SamplesFn = dyn Fn(&PromptPayload, usize) -> ClientResult<Vec<String>> + Send + Sync;

/// Closure-driven mock; the workhorse for oracle tests.
pub struct FnClient {
    label: String,
    on_options: Arc<OptionsFn>,
    on_samples: Arc<SamplesFn>,
}

impl FnClient {
    pub fn new(
        label: impl Into<String>,
        on_options: impl Fn(&PromptPayload, &[String]) -> ClientResult<Vec<f64>> + Send + Sync + 'static,
        on_samples: impl Fn(&PromptPayload, usize) -> ClientResult<Vec<String>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            on_options: Arc::new(on_options),
            on_samples: Arc::new(on_samples),
        }
    }

    /// Mock that only serves option logits.
    pub fn options_only(
        label: impl Into<String>,
        on_options: impl Fn(&PromptPayload, &[String]) -> ClientResult<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self::new(label, on_options, |_, _| {
            Err(ClientError::Capability("mock serves option logits only".into()))
        })
    }

    /// Mock that only serves sampled answers.
    pub fn samples_only(
        label: impl Into<String>,
        on_samples: impl Fn(&PromptPayload, usize) -> ClientResult<Vec<String>> + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            label,
            |_, _| Err(ClientError::Capability("mock serves samples only".into())),
            on_samples,
        )
    }
}

impl ModelClient for FnClient {
    fn name(&self) -> &str {
        &self.label
    }

    fn query_options(&self, prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>> {
        (self.on_options)(prompt, options)
    }

    fn sample_answers(
        &self,
        prompt: &PromptPayload,
        n: usize,
        _temperature: f64,
        _top_p: f64,
    ) -> ClientResult<Vec<String>> {
        (self.on_samples)(prompt, n)
    }
}

/// Counts calls into an inner client; used to assert caching behavior.
pub struct CountingClient<C> {
    inner: C,
    pub option_calls: AtomicUsize,
    pub sample_calls: AtomicUsize,
}

impl<C: ModelClient> CountingClient<C> {
    pub fn new(inner: C) -> Self {
        Self { inner, option_calls: AtomicUsize::new(0), sample_calls: AtomicUsize::new(0) }
    }

    pub fn options_seen(&self) -> usize {
        self.option_calls.load(Ordering::SeqCst)
    }

    pub fn samples_seen(&self) -> usize {
        self.sample_calls.load(Ordering::SeqCst)
    }
}

impl<C: ModelClient> ModelClient for CountingClient<C> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn query_options(&self, prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>> {
        self.option_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.query_options(prompt, options)
    }

    fn sample_answers(
        &self,
        prompt: &PromptPayload,
        n: usize,
        temperature: f64,
        top_p: f64,
    ) -> ClientResult<Vec<String>> {
        self.sample_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.sample_answers(prompt, n, temperature, top_p)
    }
}

/// Serves one fixed completion text for every sampling call; dry-run stand-in
/// for generator backends.
pub struct CannedClient {
    pub text: String,
}

impl ModelClient for CannedClient {
    fn name(&self) -> &str {
        "canned"
    }

    fn query_options(&self, _prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>> {
        Ok(vec![0.0; options.len()])
    }

    fn sample_answers(
        &self,
        _prompt: &PromptPayload,
        n: usize,
        _temperature: f64,
        _top_p: f64,
    ) -> ClientResult<Vec<String>> {
        Ok(vec![self.text.clone(); n])
    }
}

pub fn echo_from_params(_params: &ClientParams) -> ClientResult<Box<dyn ModelClient>> {
    Ok(Box::new(EchoClient))
}

pub fn canned_from_params(params: &ClientParams) -> ClientResult<Box<dyn ModelClient>> {
    let path = params
        .get("file")
        .ok_or_else(|| ClientError::Config("canned client needs file=<path>".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| ClientError::Config(format!("cannot read {path}: {e}")))?;
    Ok(Box::new(CannedClient { text }))
}

pub fn fixed_from_params(params: &ClientParams) -> ClientResult<Box<dyn ModelClient>> {
    let raw = params
        .get("logits")
        .ok_or_else(|| ClientError::Config("fixed client needs logits=v;v;v".into()))?;
    let logits: std::result::Result<Vec<f64>, _> = raw.split(';').map(str::parse).collect();
    let logits = logits.map_err(|_| ClientError::Config(format!("bad logits `{raw}`")))?;
    if logits.is_empty() {
        return Err(ClientError::Config("fixed client needs at least one logit".into()));
    }
    Ok(Box::new(FixedLogitsClient { logits }))
}

pub fn gold_from_params(params: &ClientParams) -> ClientResult<Box<dyn ModelClient>> {
    let p = params.get_f64("p")?.unwrap_or(1.0);
    let k = params.get_u64("k")?.unwrap_or(4) as usize;
    let seed = params.get_u64("seed")?.unwrap_or(0);
    Ok(Box::new(GoldAnswerClient::new(p, k, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_passthrough() {
        let client = FixedLogitsClient { logits: vec![2.0, 0.0, 0.0, 0.0] };
        let options: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let logits = client.query_options(&PromptPayload::text("q"), &options).unwrap();
        assert_eq!(logits, vec![2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn echo_repeats() {
        let out = EchoClient.sample_answers(&PromptPayload::text("hello"), 3, 1.0, 0.95).unwrap();
        assert_eq!(out, vec!["hello"; 3]);
    }

    #[test]
    fn gold_client_always_right_at_p1() {
        let client = GoldAnswerClient::new(1.0, 4, 0).unwrap();
        let payload = PromptPayload::text("q").with_meta("gold_index", 2);
        let answers = client.sample_answers(&payload, 10, 1.0, 0.95).unwrap();
        assert!(answers.iter().all(|a| a == "C"));
    }

    #[test]
    fn counting_wrapper_counts() {
        let client = CountingClient::new(EchoClient);
        let options = vec!["a".to_string()];
        client.query_options(&PromptPayload::text("q"), &options).unwrap();
        client.query_options(&PromptPayload::text("q"), &options).unwrap();
        assert_eq!(client.options_seen(), 2);
        assert_eq!(client.samples_seen(), 0);
    }
}
