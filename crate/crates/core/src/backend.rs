//! Text-generation backends.
//!
//! A remote chat-completions endpoint and three deterministic doubles sit
//! behind the same [`TextGenerator`] trait, so the whole pipeline can run
//! without a model.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::mutate;

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 2048;
pub const DEFAULT_API_KEY_ENV: &str = "SC2DEC_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("network error after {attempts} attempt(s): {message}")]
    NetworkError { attempts: u32, message: String },
    #[error("backend misconfigured: {0}")]
    BackendMisconfigured(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    #[default]
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    /// Sample the prompt was built for; the oracle doubles key on it.
    #[serde(default)]
    pub sample_id: Option<String>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            decoding: Decoding::Greedy,
            stop_sequences: Vec::new(),
            sample_id: None,
        }
    }

    pub fn for_sample(mut self, sample_id: impl Into<String>) -> Self {
        self.sample_id = Some(sample_id.into());
        self
    }

    pub fn with_max_new_tokens(mut self, n: u32) -> Self {
        self.max_new_tokens = n;
        self
    }
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError>;
}

/// Declarative backend selection, as found in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    Remote {
        endpoint_url: String,
        model_name: String,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
    },
    EchoOracle {
        answer_map: BTreeMap<String, String>,
    },
    NullModel,
    Mutator {
        seed: u64,
        answer_map: BTreeMap<String, String>,
    },
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_max_in_flight() -> usize {
    4
}

impl BackendKind {
    pub fn build(&self) -> Result<Box<dyn TextGenerator>, BackendError> {
        Ok(match self {
            BackendKind::Remote {
                endpoint_url,
                model_name,
                api_key_env,
                max_in_flight,
            } => Box::new(RemoteChat::new(
                endpoint_url,
                model_name,
                api_key_env,
                *max_in_flight,
                RetryPolicy::default(),
            )?),
            BackendKind::EchoOracle { answer_map } => Box::new(EchoOracle::new(answer_map.clone())),
            BackendKind::NullModel => Box::new(NullModel),
            BackendKind::Mutator { seed, answer_map } => {
                Box::new(Mutator::new(*seed, answer_map.clone()))
            }
        })
    }
}

fn check_prompt(req: &GenerationRequest) -> Result<(), BackendError> {
    if req.prompt.is_empty() {
        return Err(BackendError::BackendMisconfigured("empty prompt".into()));
    }
    Ok(())
}

fn lookup<'a>(map: &'a BTreeMap<String, String>, req: &GenerationRequest) -> Result<&'a str, BackendError> {
    let id = req
        .sample_id
        .as_deref()
        .ok_or_else(|| BackendError::BackendMisconfigured("request carries no sample id".into()))?;
    map.get(id)
        .map(String::as_str)
        .ok_or_else(|| BackendError::BackendMisconfigured(format!("no reference source for sample `{id}`")))
}

/// Always answers with the empty string.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullModel;

impl TextGenerator for NullModel {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        check_prompt(req)?;
        Ok(String::new())
    }
}

/// Answers with the reference source of the request's sample.
#[derive(Debug, Clone)]
pub struct EchoOracle {
    answers: BTreeMap<String, String>,
}

impl EchoOracle {
    pub fn new(answers: BTreeMap<String, String>) -> Self {
        EchoOracle { answers }
    }
}

impl TextGenerator for EchoOracle {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        check_prompt(req)?;
        lookup(&self.answers, req).map(str::to_string)
    }
}

/// Answers with the reference source minus one statement.
#[derive(Debug, Clone)]
pub struct Mutator {
    seed: u64,
    answers: BTreeMap<String, String>,
}

impl Mutator {
    pub fn new(seed: u64, answers: BTreeMap<String, String>) -> Self {
        Mutator { seed, answers }
    }
}

impl TextGenerator for Mutator {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        check_prompt(req)?;
        let reference = lookup(&self.answers, req)?;
        Ok(mutate::delete_one_statement(reference, self.seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    free: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn new(n: usize) -> Self {
        InFlight {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-style chat-completions client with greedy decoding.
#[derive(Debug)]
pub struct RemoteChat {
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    in_flight: InFlight,
}

enum AttemptError {
    Retryable(String),
    Fatal(String),
}

impl RemoteChat {
    pub fn new(
        endpoint_url: &str,
        model_name: &str,
        api_key_env: &str,
        max_in_flight: usize,
        retry: RetryPolicy,
    ) -> Result<Self, BackendError> {
        if endpoint_url.trim().is_empty() {
            return Err(BackendError::BackendMisconfigured("empty endpoint url".into()));
        }
        if model_name.trim().is_empty() {
            return Err(BackendError::BackendMisconfigured("empty model name".into()));
        }
        let api_key = std::env::var(api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{api_key_env} is not set; sending requests without authorization");
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| BackendError::BackendMisconfigured(e.to_string()))?;
        Ok(RemoteChat {
            url: chat_completions_url(endpoint_url),
            model: model_name.to_string(),
            api_key,
            client,
            retry,
            in_flight: InFlight::new(max_in_flight),
        })
    }

    /// Request body for one prompt.
    pub fn request_body(&self, req: &GenerationRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": 0,
            "max_tokens": req.max_new_tokens,
        });
        if !req.stop_sequences.is_empty() {
            body["stop"] = json!(req.stop_sequences);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, AttemptError> {
        let mut rb = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| AttemptError::Retryable(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(AttemptError::Retryable(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(format!("HTTP {status}: {text}")));
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| AttemptError::Fatal(format!("bad response body: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AttemptError::Fatal("response has no choices[0].message.content".into()))
    }
}

fn chat_completions_url(endpoint: &str) -> String {
    let e = endpoint.trim_end_matches('/');
    if e.ends_with("/chat/completions") {
        e.to_string()
    } else {
        format!("{e}/chat/completions")
    }
}

impl TextGenerator for RemoteChat {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        check_prompt(req)?;
        let body = self.request_body(req);
        let _slot = self.in_flight.acquire();
        let mut backoff = self.retry.initial_backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(AttemptError::Fatal(message)) => {
                    return Err(BackendError::NetworkError { attempts, message })
                }
                Err(AttemptError::Retryable(message)) => {
                    if attempts >= self.retry.max_attempts {
                        return Err(BackendError::NetworkError { attempts, message });
                    }
                    log::warn!("request failed (attempt {attempts}): {message}; retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
}

/// Returns the contents of the first fenced code block, or the trimmed
/// input when there is none.
pub fn extract_code(model_output: &str) -> String {
    const FENCE: &str = "```";
    let Some(open) = model_output.find(FENCE) else {
        return model_output.trim().to_string();
    };
    let after_open = &model_output[open + FENCE.len()..];
    let Some(close) = after_open.find(FENCE) else {
        return model_output.trim().to_string();
    };
    let inner = &after_open[..close];
    // the info string (language tag) runs to the end of the opening line
    let content = match inner.find('\n') {
        Some(nl) => &inner[nl + 1..],
        None => inner,
    };
    content.trim().to_string()
}
