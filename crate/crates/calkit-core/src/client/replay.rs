//! Network-free backend that replays a recorded request/response log.
//!
//! Requests are matched by canonical JSON of the wire body. Responses for
//! identical requests are served FIFO, so a rerun that issues the same
//! call sequence reproduces the original outputs byte for byte.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use serde_json::Value;

use super::http::{parse_options_response, parse_samples_response};
use super::{wire_request, ClientError, ClientParams, ClientResult, ModelClient, PromptPayload, WireCall};
use crate::util::canonical_json;

pub struct ReplayClient {
    exchanges: Mutex<HashMap<String, VecDeque<Value>>>,
}

impl ReplayClient {
    pub fn from_log(path: impl AsRef<Path>) -> ClientResult<Self> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| ClientError::Config(format!("cannot open replay log {path:?}: {e}")))?;
        let mut exchanges: HashMap<String, VecDeque<Value>> = HashMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ClientError::Config(format!("replay log read: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: Value = serde_json::from_str(&line).map_err(|e| {
                ClientError::Config(format!("replay log line {}: {e}", idx + 1))
            })?;
            let request = entry.get("request").ok_or_else(|| {
                ClientError::Config(format!("replay log line {} has no request", idx + 1))
            })?;
            let response = entry.get("response").ok_or_else(|| {
                ClientError::Config(format!("replay log line {} has no response", idx + 1))
            })?;
            exchanges
                .entry(canonical_json(request))
                .or_default()
                .push_back(response.clone());
        }
        if exchanges.is_empty() {
            return Err(ClientError::Config("replay log holds no exchanges".into()));
        }
        Ok(Self { exchanges: Mutex::new(exchanges) })
    }

    fn lookup(&self, request: &Value) -> ClientResult<Value> {
        let key = canonical_json(request);
        let mut exchanges = self.exchanges.lock().unwrap();
        match exchanges.get_mut(&key) {
            Some(queue) => queue.pop_front().ok_or_else(|| {
                ClientError::ReplayMiss(format!("responses exhausted for request {key}"))
            }),
            None => Err(ClientError::ReplayMiss(format!("no logged response for request {key}"))),
        }
    }
}

impl ModelClient for ReplayClient {
    fn name(&self) -> &str {
        "replay"
    }

    fn query_options(&self, prompt: &PromptPayload, options: &[String]) -> ClientResult<Vec<f64>> {
        let request = wire_request(prompt, &WireCall::Options { options });
        let response = self.lookup(&request)?;
        parse_options_response(&response, options.len())
    }

    fn sample_answers(
        &self,
        prompt: &PromptPayload,
        n: usize,
        temperature: f64,
        top_p: f64,
    ) -> ClientResult<Vec<String>> {
        let request = wire_request(prompt, &WireCall::Samples { n, temperature, top_p });
        let response = self.lookup(&request)?;
        parse_samples_response(&response, n)
    }
}

pub fn from_params(params: &ClientParams) -> ClientResult<Box<dyn ModelClient>> {
    let path = params
        .get("log")
        .ok_or_else(|| ClientError::Config("replay client needs log=<path>".into()))?;
    Ok(Box::new(ReplayClient::from_log(path)?))
}
