//! JSON-over-HTTP backend for live model servers.
//!
//! Wire shape is a chat-completion style POST (see [`super::wire_request`]).
//! Per-option logits come back as `option_logprobs`; servers that cannot
//! score all options in one call are handled by a one-call-per-option
//! fallback (`score_option` / `logprob`). Every request/response pair can
//! be logged as JSONL for byte-deterministic replay.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{wire_request, ClientError, ClientParams, ClientResult, ModelClient, PromptPayload, WireCall};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token — never
    /// the secret itself. Resolved once at construction.
    pub auth_env: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// Score each option with its own request instead of expecting
    /// `option_logprobs` in one response.
    pub per_option_scoring: bool,
    /// Append request/response pairs here for later replay.
    pub log_path: Option<PathBuf>,
    pub backoff_base_ms: u64,
    pub jitter_seed: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            auth_env: None,
            model: None,
            timeout: Duration::from_secs(60),
            max_retries: 2,
            max_in_flight: 4,
            per_option_scoring: false,
            log_path: None,
            backoff_base_ms: 100,
            jitter_seed: 0,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self { slots: Mutex::new(limit.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
    }

    fn release(&self) {
        *self.slots.lock().unwrap() += 1;
        self.freed.notify_one();
    }
}

pub struct HttpClient {
    config: ClientConfig,
    token: Option<String>,
    http: reqwest::blocking::Client,
    in_flight: InFlight,
    log: Option<Mutex<std::fs::File>>,
    jitter: Mutex<ChaCha8Rng>,
}

impl HttpClient {
    pub fn new(config: ClientConfig) -> ClientResult<Self> {
        if config.endpoint.is_empty() {
            return Err(ClientError::Config("endpoint must be set".into()));
        }
        if config.timeout.is_zero() {
            return Err(ClientError::Config("timeout must be > 0".into()));
        }
        let token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ClientError::Config(format!("auth env var `{var}` is not set"))
            })?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        let log = match &config.log_path {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ClientError::Config(format!("cannot open log {path:?}: {e}")))?,
            )),
            None => None,
        };
        Ok(Self {
            in_flight: InFlight::new(config.max_in_flight),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(config.jitter_seed)),
            token,
            http,
            log,
            config,
        })
    }

    fn record_exchange(&self, request: &Value, response: &Value) {
        if let Some(log) = &self.log {
            let line = json!({
                "request": request,
                "response": response,
                "timestamp": std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            });
            let mut file = log.lock().unwrap();
            let _ = writeln!(file, "{line}");
        }
    }

    fn backoff(&self, attempt: u32) {
        let jitter: u64 = self.jitter.lock().unwrap().random_range(0..self.config.backoff_base_ms.max(1));
        let delay = self.config.backoff_base_ms.saturating_mul(1 << attempt.min(6)) + jitter;
        std::thread::sleep(Duration::from_millis(delay));
    }

    /// POST with bounded retries; 5xx and transport failures retry,
    /// everything else surfaces immediately.
    fn post(&self, body: &Value) -> ClientResult<Value> {
        let mut request_body = body.clone();
        if let Some(model) = &self.config.model {
            request_body["model"] = json!(model);
        }
        self.in_flight.acquire();
        let result = self.post_inner(&request_body);
        self.in_flight.release();
        let response = result?;
        self.record_exchange(body, &response);
        Ok(response)
    }

    fn post_inner(&self, body: &Value) -> ClientResult<Value> {
        let mut last_error = String::new();
        let mut attempts = 0;
        while attempts <= self.config.max_retries {
            if attempts > 0 {
                self.backoff(attempts - 1);
            }
            attempts += 1;
            let mut request = self.http.post(&self.config.endpoint).json(body);
            if let Some(token) = &self.token {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    let text = response.text().unwrap_or_default();
                    if status.is_success() {
                        return serde_json::from_str(&text).map_err(|e| {
                            ClientError::Http { status: status.as_u16(), body: format!("invalid JSON: {e}") }
                        });
                    }
                    if status.is_server_error() {
                        last_error = format!("HTTP {status}: {text}");
                        continue;
                    }
                    return Err(ClientError::Http { status: status.as_u16(), body: text });
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(ClientError::Transport { attempts, message: last_error })
    }
}

/// Extract per-option logits from a server response.
pub(crate) fn parse_options_response(response: &Value, k: usize) -> ClientResult<Vec<f64>> {
    let values = response
        .get("option_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| {
            ClientError::Capability("server response carries no `option_logprobs`".into())
        })?;
    if values.len() != k {
        return Err(ClientError::Capability(format!(
            "server returned {} option logprobs for {k} options",
            values.len()
        )));
    }
    values
        .iter()
        .map(|v| {
            v.as_f64()
                .filter(|f| f.is_finite())
                .ok_or_else(|| ClientError::Capability(format!("non-numeric logprob {v}")))
        })
        .collect()
}

/// Extract sampled completions; fewer than `n` is a partial result.
pub(crate) fn parse_samples_response(response: &Value, n: usize) -> ClientResult<Vec<String>> {
    let choices = response
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ClientError::Capability("server response carries no `choices`".into()))?;
    let mut texts = Vec::with_capacity(choices.len());
    for choice in choices {
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ClientError::Capability("choice has no message.content".into()))?;
        texts.push(text.to_string());
    }
    if texts.len() < n {
        return Err(ClientError::Partial { received: texts, expected: n });
    }
    texts.truncate(n);
    Ok(texts)
}

impl ModelClient for HttpClient {
    fn name(&self) -> &str {
        "http"
    }

    fn query_options(&self, prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>> {
        if self.config.per_option_scoring {
            let mut logits = Vec::with_capacity(options.len());
            for option in options {
                let mut body = wire_request(prompt, &WireCall::Options { options: std::slice::from_ref(option) });
                body["score_option"] = json!(option);
                body.as_object_mut().unwrap().remove("options");
                let response = self.post(&body)?;
                let logprob = response
                    .get("logprob")
                    .and_then(Value::as_f64)
                    .filter(|f| f.is_finite())
                    .ok_or_else(|| {
                        ClientError::Capability("server response carries no `logprob`".into())
                    })?;
                logits.push(logprob);
            }
            return Ok(logits);
        }
        let body = wire_request(prompt, &WireCall::Options { options });
        let response = self.post(&body)?;
        parse_options_response(&response, options.len())
    }

    fn sample_answers(
        &self,
        prompt: &PromptPayload,
        n: usize,
        temperature: f64,
        top_p: f64,
    ) -> ClientResult<Vec<String>> {
        let body = wire_request(prompt, &WireCall::Samples { n, temperature, top_p });
        let response = self.post(&body)?;
        parse_samples_response(&response, n)
    }
}

pub fn from_params(params: &ClientParams) -> ClientResult<Box<dyn ModelClient>> {
    let endpoint = params
        .get("endpoint")
        .ok_or_else(|| ClientError::Config("http client needs endpoint=<url>".into()))?
        .to_string();
    let config = ClientConfig {
        endpoint,
        auth_env: params.get("auth_env").map(String::from),
        model: params.get("model").map(String::from),
        timeout: Duration::from_secs(params.get_u64("timeout_s")?.unwrap_or(60).max(1)),
        max_retries: params.get_u64("retries")?.unwrap_or(2) as u32,
        max_in_flight: params.get_u64("in_flight")?.unwrap_or(4) as usize,
        per_option_scoring: params.get("per_option") == Some("true"),
        log_path: params.get("log").map(PathBuf::from),
        backoff_base_ms: params.get_u64("backoff_ms")?.unwrap_or(100),
        jitter_seed: params.get_u64("seed")?.unwrap_or(0),
    };
    Ok(Box::new(HttpClient::new(config)?))
}
