//! The single boundary to everything that answers questions.
//!
//! Every backend — live HTTP server, replay log, synthetic simulator,
//! deterministic mock — sits behind [`ModelClient`] and is constructed by
//! name through [`ClientRegistry`], so pipelines and the CLI select a
//! backend at runtime (`--client synthetic:k=4,seed=7`).

pub mod http;
pub mod mock;
pub mod replay;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use base64::Engine;
use serde_json::{json, Value};
use thiserror::Error;

use crate::record::{option_letter, ResponseRecord};

/// Everything a prompt carries to a backend.
///
/// `meta` is side-channel provenance (item id, sigma, k, suffix, gold index
/// for simulators) used by logging, caching, and synthetic backends. It is
/// never serialized into an outbound HTTP request.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptPayload {
    pub text: String,
    pub image: Option<ImageAttachment>,
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAttachment {
    /// Lowercase format tag, e.g. "png".
    pub format: String,
    pub bytes: Vec<u8>,
}

impl PromptPayload {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), image: None, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_image(mut self, format: &str, bytes: Vec<u8>) -> Self {
        self.image = Some(ImageAttachment { format: format.to_string(), bytes });
        self
    }

    pub fn meta_usize(&self, key: &str) -> Option<usize> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    /// Standard question prompt for a record: question plus lettered options.
    pub fn for_record(record: &ResponseRecord) -> Self {
        let mut text = format!("Question: {}", record.question);
        if let Some(options) = &record.options {
            for (i, option) in options.iter().enumerate() {
                text.push('\n');
                text.push_str(&format!("{}. {}", option_letter(i), option));
            }
        }
        let mut payload = Self::text(text).with_meta("record_id", &record.id);
        if let Some(gold) = record.gold_index {
            payload = payload.with_meta("gold_index", gold);
        }
        payload
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    /// The backend cannot serve the requested capability (e.g. no
    /// per-option log-probabilities).
    #[error("capability error: {0}")]
    Capability(String),

    /// Fewer completions than requested; carries what did arrive.
    #[error("partial result: got {} of {expected} completions", received.len())]
    Partial { received: Vec<String>, expected: usize },

    #[error("replay miss: {0}")]
    ReplayMiss(String),

    #[error("client config error: {0}")]
    Config(String),
}

pub type ClientResult<T> = std::result::Result<T, ClientError>;

/// A question-answering backend.
pub trait ModelClient: Send + Sync {
    fn name(&self) -> &str;

    /// Per-option logits aligned with `options`.
    fn query_options(&self, prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>>;

    /// `n` sampled completions, order preserved as received.
    fn sample_answers(
        &self,
        prompt: &PromptPayload,
        n: usize,
        temperature: f64,
        top_p: f64,
    ) -> ClientResult<Vec<String>>;
}

impl<T: ModelClient + ?Sized> ModelClient for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn query_options(&self, prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>> {
        (**self).query_options(prompt, options)
    }

    fn sample_answers(
        &self,
        prompt: &PromptPayload,
        n: usize,
        temperature: f64,
        top_p: f64,
    ) -> ClientResult<Vec<String>> {
        (**self).sample_answers(prompt, n, temperature, top_p)
    }
}

/// Retry a client call with bounded attempts. A `Partial` result is
/// returned to the caller as-is (it carries usable data).
pub fn with_retries<T>(
    max_retries: u32,
    mut call: impl FnMut() -> ClientResult<T>,
) -> ClientResult<T> {
    let mut last = None;
    for _ in 0..=max_retries {
        match call() {
            Ok(value) => return Ok(value),
            Err(e @ ClientError::Partial { .. }) => return Err(e),
            Err(e @ ClientError::Capability(_)) => return Err(e),
            Err(other) => last = Some(other),
        }
    }
    Err(last.unwrap_or(ClientError::Config("retry loop with no attempts".into())))
}

// ─── wire shape ──────────────────────────────────────────────────────────────

/// Kind of request, used for canonical matching between live and replay runs.
#[derive(Debug, Clone, Copy)]
pub enum WireCall<'a> {
    Options { options: &'a [String] },
    Samples { n: usize, temperature: f64, top_p: f64 },
}

/// The JSON body sent to a server (and the replay-log key). Chat-completion
/// shaped; images ride as base64 attachments; meta never leaves the process.
pub fn wire_request(prompt: &PromptPayload, call: &WireCall<'_>) -> Value {
    let mut content = vec![json!({"type": "text", "text": prompt.text})];
    if let Some(image) = &prompt.image {
        content.push(json!({
            "type": "image",
            "format": image.format,
            "data_base64": base64::engine::general_purpose::STANDARD.encode(&image.bytes),
        }));
    }
    let mut body = json!({
        "messages": [{"role": "user", "content": content}],
    });
    match call {
        WireCall::Options { options } => {
            body["options"] = json!(options);
            body["logprobs"] = json!(true);
        }
        WireCall::Samples { n, temperature, top_p } => {
            body["n"] = json!(n);
            body["temperature"] = json!(temperature);
            body["top_p"] = json!(top_p);
        }
    }
    body
}

// ─── registry ────────────────────────────────────────────────────────────────

/// Parsed `name:key=value,key=value` client spec.
#[derive(Debug, Clone)]
pub struct ClientParams {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

impl ClientParams {
    pub fn parse(spec: &str) -> ClientResult<Self> {
        let (name, rest) = match spec.split_once(':') {
            Some((name, rest)) => (name, rest),
            None => (spec, ""),
        };
        if name.is_empty() {
            return Err(ClientError::Config("empty client name".into()));
        }
        let mut params = BTreeMap::new();
        for pair in rest.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| ClientError::Config(format!("expected key=value, got `{pair}`")))?;
            params.insert(key.to_string(), value.to_string());
        }
        Ok(Self { name: name.to_string(), params })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> ClientResult<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| ClientError::Config(format!("`{key}` must be a number, got `{v}`")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> ClientResult<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| ClientError::Config(format!("`{key}` must be an integer, got `{v}`")))
            })
            .transpose()
    }
}

pub type ClientFactory = fn(&ClientParams) -> ClientResult<Box<dyn ModelClient>>;

/// Name-indexed client constructors; the runtime strategy switchboard.
pub struct ClientRegistry {
    factories: BTreeMap<String, ClientFactory>,
}

impl ClientRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    /// Registry with every built-in backend.
    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        registry.register("http", http::from_params);
        registry.register("replay", replay::from_params);
        registry.register("synthetic", synthetic::from_params);
        registry.register("scaled-synthetic", synthetic::scaled_from_params);
        registry.register("echo", mock::echo_from_params);
        registry.register("fixed", mock::fixed_from_params);
        registry.register("gold", mock::gold_from_params);
        registry.register("canned", mock::canned_from_params);
        registry
    }

    pub fn register(&mut self, name: &str, factory: ClientFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, spec: &str) -> ClientResult<Box<dyn ModelClient>> {
        let params = ClientParams::parse(spec)?;
        let factory = self.factories.get(&params.name).ok_or_else(|| {
            ClientError::Config(format!(
                "unknown client `{}`; known: {}",
                params.name,
                self.names().join(", ")
            ))
        })?;
        factory(&params)
    }
}
