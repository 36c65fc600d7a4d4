//! Trace acquisition from OpenAI-compatible services.
//!
//! One greedy completion (temperature 0) with token logprobs, `k` sampled
//! completions, and sentence embeddings per question. Responses are cached by
//! content so repeated runs are reproducible offline.

pub mod cache;
pub mod mock;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::trace::{Decoding, EmbeddingVector, GenerationTrace, QARecord, Sample, SamplingParams, TokenEvent};
pub use cache::{CacheKey, ResponseCache};

pub const API_KEY_ENV: &str = "SPANCONF_API_KEY";
pub const DEFAULT_PROMPT_TEMPLATE: &str = "Question: {question}\nAnswer:";
pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const DEFAULT_TOP_P: f64 = 0.99;
pub const DEFAULT_TOP_K: u32 = 10;
pub const DEFAULT_SAMPLES: usize = 5;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error after {attempts} attempt(s): {reason}")]
    Transport { attempts: u32, reason: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("capability error: {0}")]
    Capability(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Bearer token. Never printed.
#[derive(Clone)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn from_env() -> Result<Self, ClientError> {
        match std::env::var(API_KEY_ENV) {
            Ok(k) if !k.is_empty() => Ok(Self(k)),
            _ => Err(ClientError::Config(format!(
                "environment variable {API_KEY_ENV} is not set"
            ))),
        }
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    #[default]
    Completions,
    Chat,
}

impl Endpoint {
    fn path(self) -> &'static str {
        match self {
            Endpoint::Completions => "/v1/completions",
            Endpoint::Chat => "/v1/chat/completions",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    /// Sent only to providers that accept it.
    pub top_k: Option<u32>,
    /// Number of stochastic samples per question.
    pub k: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            top_k: Some(DEFAULT_TOP_K),
            k: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub base_url: String,
    pub model: String,
    /// Defaults to `model` when absent.
    pub embedding_model: Option<String>,
    pub endpoint: Endpoint,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff: Duration,
    pub max_concurrency: usize,
    pub max_tokens: u32,
    pub prompt_template: String,
    pub sampling: SamplingConfig,
    pub fetch_embeddings: bool,
}

impl ClientConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            embedding_model: None,
            endpoint: Endpoint::default(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            max_concurrency: 4,
            max_tokens: 64,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.to_string(),
            sampling: SamplingConfig::default(),
            fetch_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.max_concurrency == 0 {
            return Err(ClientError::Config("max_concurrency must be at least 1".into()));
        }
        if !self.sampling.temperature.is_finite() || self.sampling.temperature < 0.0 {
            return Err(ClientError::Config("temperature must be non-negative".into()));
        }
        if !(self.sampling.top_p > 0.0 && self.sampling.top_p <= 1.0) {
            return Err(ClientError::Config("top_p must be in (0, 1]".into()));
        }
        if self.base_url.is_empty() || self.model.is_empty() {
            return Err(ClientError::Config("base_url and model are required".into()));
        }
        Ok(())
    }

    pub fn render_prompt(&self, question: &str) -> String {
        self.prompt_template.replace("{question}", question)
    }

    fn embedding_model(&self) -> &str {
        self.embedding_model.as_deref().unwrap_or(&self.model)
    }
}

/// A sampled completion's text and, when the provider returned logprobs, its trace.
pub type SampledText = (String, Option<GenerationTrace>);

/// Input item for [`LlmClient::build_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub id: String,
    pub question: String,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedItem {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FetchManifest {
    pub failed: Vec<FailedItem>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FetchOutcome {
    pub records: Vec<QARecord>,
    pub manifest: FetchManifest,
}

pub struct LlmClient {
    cfg: ClientConfig,
    key: ApiKey,
    http: reqwest::blocking::Client,
    cache: Option<ResponseCache>,
}

enum Kind {
    Completion,
    Embedding,
}

impl Kind {
    fn name(&self) -> &'static str {
        match self {
            Kind::Completion => "completion",
            Kind::Embedding => "embedding",
        }
    }
}

impl LlmClient {
    pub fn new(cfg: ClientConfig, key: ApiKey, cache: Option<ResponseCache>) -> Result<Self, ClientError> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self { cfg, key, http, cache })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn cached(&self, kind: &Kind, model: &str, body: &Value) -> Option<Value> {
        let cache = self.cache.as_ref()?;
        let key = CacheKey::new(&self.cfg.base_url, model, kind.name(), body);
        let text = cache.get(&key)?;
        match serde_json::from_str(&text) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", key.as_str());
                None
            }
        }
    }

    /// POSTs `body`, serving from and filling the cache. 429, 5xx and
    /// connection failures are retried with exponential backoff; other
    /// statuses fail immediately.
    fn post(&self, path: &str, kind: Kind, model: &str, body: &Value) -> Result<Value, ClientError> {
        if let Some(v) = self.cached(&kind, model, body) {
            return Ok(v);
        }
        let url = self.url(path);
        let attempts = self.cfg.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.cfg.backoff.saturating_mul(1u32 << (attempt - 1).min(16));
                thread::sleep(delay);
            }
            let resp = self
                .http
                .post(&url)
                .bearer_auth(&self.key.0)
                .header("Content-Type", "application/json")
                .body(body.to_string())
                .send();
            match resp {
                Ok(r) => {
                    let status = r.status();
                    let text = r.text().unwrap_or_default();
                    if status.is_success() {
                        let value: Value =
                            serde_json::from_str(&text).map_err(|e| ClientError::Malformed(e.to_string()))?;
                        if let Some(cache) = &self.cache {
                            let key = CacheKey::new(&self.cfg.base_url, model, kind.name(), body);
                            if let Err(e) = cache.put(&key, &text) {
                                log::warn!("could not write cache entry: {e}");
                            }
                        }
                        return Ok(value);
                    }
                    if status.as_u16() == 429 || status.is_server_error() {
                        last = format!("HTTP {}", status.as_u16());
                        log::debug!("{url}: {last}, attempt {}/{attempts}", attempt + 1);
                        continue;
                    }
                    return Err(ClientError::Http {
                        status: status.as_u16(),
                        body: truncate(&text, 300),
                    });
                }
                Err(e) => {
                    // reqwest errors carry the URL but never request headers.
                    last = e.without_url().to_string();
                    log::debug!("{url}: {last}, attempt {}/{attempts}", attempt + 1);
                }
            }
        }
        Err(ClientError::Transport { attempts, reason: last })
    }

    fn completion_body(&self, prompt: &str, sampling: Option<(SamplingParams, usize)>) -> Value {
        let mut body = json!({
            "model": self.cfg.model,
            "max_tokens": self.cfg.max_tokens,
        });
        match self.cfg.endpoint {
            Endpoint::Completions => {
                body["prompt"] = json!(prompt);
                body["logprobs"] = json!(1);
            }
            Endpoint::Chat => {
                body["messages"] = json!([{"role": "user", "content": prompt}]);
                body["logprobs"] = json!(true);
            }
        }
        match sampling {
            None => body["temperature"] = json!(0.0),
            Some((p, index)) => {
                body["temperature"] = json!(p.temperature);
                body["top_p"] = json!(p.top_p);
                if let Some(k) = p.top_k {
                    body["top_k"] = json!(k);
                }
                body["seed"] = json!(index);
            }
        }
        body
    }

    /// Greedy completion with per-token logprobs.
    pub fn fetch_greedy(&self, question: &str) -> Result<GenerationTrace, ClientError> {
        let prompt = self.cfg.render_prompt(question);
        let body = self.completion_body(&prompt, None);
        let resp = self.post(self.cfg.endpoint.path(), Kind::Completion, &self.cfg.model, &body)?;
        let (text, tokens) = parse_completion(&resp, self.cfg.endpoint)?;
        let tokens = tokens.ok_or_else(|| ClientError::Capability("provider does not expose logprobs".into()))?;
        if tokens.is_empty() {
            return Err(ClientError::Capability("empty completion".into()));
        }
        GenerationTrace::new(text, tokens, Decoding::Greedy).map_err(ClientError::Malformed)
    }

    fn fetch_one_sample(
        &self,
        prompt: &str,
        index: usize,
        warnings: &mut Vec<String>,
    ) -> Result<(String, Option<GenerationTrace>), ClientError> {
        let s = self.cfg.sampling;
        let full = SamplingParams {
            temperature: s.temperature,
            top_p: s.top_p,
            top_k: s.top_k,
        };
        let without_k = SamplingParams { top_k: None, ..full };
        let with_body = self.completion_body(prompt, Some((full, index)));
        let without_body = self.completion_body(prompt, Some((without_k, index)));
        let path = self.cfg.endpoint.path();

        // A cached top_k-free response means the provider already rejected top_k.
        let (params, resp) = if s.top_k.is_some()
            && self.cached(&Kind::Completion, &self.cfg.model, &with_body).is_none()
            && self.cached(&Kind::Completion, &self.cfg.model, &without_body).is_some()
        {
            (
                without_k,
                self.post(path, Kind::Completion, &self.cfg.model, &without_body)?,
            )
        } else {
            match self.post(path, Kind::Completion, &self.cfg.model, &with_body) {
                Err(ClientError::Http { status, body }) if s.top_k.is_some() && rejects_top_k(status, &body) => {
                    let msg = "provider rejected top_k; sampling without it".to_string();
                    log::warn!("{msg}");
                    warnings.push(msg);
                    (
                        without_k,
                        self.post(path, Kind::Completion, &self.cfg.model, &without_body)?,
                    )
                }
                other => (full, other?),
            }
        };
        let (text, tokens) = parse_completion(&resp, self.cfg.endpoint)?;
        let trace = match tokens {
            Some(t) if !t.is_empty() => Some(
                GenerationTrace::new(text.clone(), t, Decoding::Sampled(Some(params)))
                    .map_err(ClientError::Malformed)?,
            ),
            _ => None,
        };
        Ok((text, trace))
    }

    /// `k` sampled completions in index order. Partial failures are reported
    /// as warnings; zero successes out of `k > 0` is an error.
    pub fn fetch_samples(&self, question: &str) -> Result<(Vec<SampledText>, Vec<String>), ClientError> {
        let k = self.cfg.sampling.k;
        let prompt = self.cfg.render_prompt(question);
        let mut warnings = Vec::new();
        let mut out = Vec::with_capacity(k);
        let mut last_err = None;
        for i in 0..k {
            match self.fetch_one_sample(&prompt, i, &mut warnings) {
                Ok(s) => out.push(s),
                Err(e) => {
                    warnings.push(format!("sample {i} failed: {e}"));
                    last_err = Some(e);
                }
            }
        }
        warnings.dedup();
        match last_err {
            Some(e) if out.is_empty() => Err(e),
            _ => Ok((out, warnings)),
        }
    }

    pub fn fetch_embedding(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        if text.trim().is_empty() {
            log::warn!("requesting an embedding for empty text");
        }
        let model = self.cfg.embedding_model();
        let body = json!({"model": model, "input": text});
        let resp = self.post("/v1/embeddings", Kind::Embedding, model, &body)?;
        let values = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ClientError::Malformed("embedding response lacks data[0].embedding".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| ClientError::Malformed("non-numeric embedding value".into()))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        EmbeddingVector::new(values).map_err(ClientError::Malformed)
    }

    fn build_one(&self, item: &QuestionItem, warnings: &mut Vec<String>) -> Result<QARecord, ClientError> {
        if item.references.is_empty() {
            return Err(ClientError::Config(format!("item {:?} has no references", item.id)));
        }
        let greedy = self.fetch_greedy(&item.question)?;
        let samples = if self.cfg.sampling.k == 0 {
            Vec::new()
        } else {
            let (s, w) = self.fetch_samples(&item.question)?;
            warnings.extend(w);
            s
        };
        let mut record = QARecord {
            id: item.id.clone(),
            question: item.question.clone(),
            references: item.references.clone(),
            greedy,
            samples: samples
                .into_iter()
                .map(|(text, trace)| Sample {
                    text,
                    trace,
                    embedding: None,
                })
                .collect(),
            greedy_embedding: None,
            reference_embeddings: None,
        };
        if self.cfg.fetch_embeddings {
            match self.embed_record(&record) {
                Ok((g, refs, samples)) => {
                    record.greedy_embedding = Some(g);
                    record.reference_embeddings = Some(refs);
                    for (s, e) in record.samples.iter_mut().zip(samples) {
                        s.embedding = Some(e);
                    }
                }
                Err(e) => warnings.push(format!("embeddings skipped: {e}")),
            }
        }
        record.validate().map_err(|e| ClientError::Malformed(e.to_string()))?;
        Ok(record)
    }

    #[allow(clippy::type_complexity)]
    fn embed_record(
        &self,
        r: &QARecord,
    ) -> Result<(EmbeddingVector, Vec<EmbeddingVector>, Vec<EmbeddingVector>), ClientError> {
        let g = self.fetch_embedding(r.greedy.text())?;
        let refs = r
            .references
            .iter()
            .map(|t| self.fetch_embedding(t))
            .collect::<Result<_, _>>()?;
        let samples = r
            .samples
            .iter()
            .map(|s| self.fetch_embedding(&s.text))
            .collect::<Result<_, _>>()?;
        Ok((g, refs, samples))
    }

    /// Fetches every item with at most `max_concurrency` requests in flight.
    /// Output order follows input order; failed items are listed in the
    /// manifest instead.
    pub fn build_dataset(&self, items: &[QuestionItem]) -> FetchOutcome {
        type Slot = Option<(Result<QARecord, ClientError>, Vec<String>)>;
        let slots: Mutex<Vec<Slot>> = Mutex::new((0..items.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = self.cfg.max_concurrency.min(items.len()).max(1);
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let mut warnings = Vec::new();
                    let result = self.build_one(&items[i], &mut warnings);
                    slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some((result, warnings));
                });
            }
        });

        let mut records = Vec::new();
        let mut manifest = FetchManifest::default();
        let slots = slots.into_inner().unwrap_or_else(|e| e.into_inner());
        for (item, slot) in items.iter().zip(slots) {
            let (result, warnings) = slot.expect("every index is claimed by a worker");
            manifest
                .warnings
                .extend(warnings.into_iter().map(|w| format!("{}: {w}", item.id)));
            match result {
                Ok(r) => records.push(r),
                Err(e) => {
                    log::warn!("item {} failed: {e}", item.id);
                    manifest.failed.push(FailedItem {
                        id: item.id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        FetchOutcome { records, manifest }
    }
}

fn rejects_top_k(status: u16, body: &str) -> bool {
    (status == 400 || status == 422) && body.contains("top_k")
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

/// Extracts the text and, when present, the token logprobs of the first choice.
pub fn parse_completion(resp: &Value, endpoint: Endpoint) -> Result<(String, Option<Vec<TokenEvent>>), ClientError> {
    let choice = resp
        .pointer("/choices/0")
        .ok_or_else(|| ClientError::Malformed("response has no choices".into()))?;
    let text = match endpoint {
        Endpoint::Completions => choice.get("text"),
        Endpoint::Chat => choice.pointer("/message/content"),
    }
    .and_then(Value::as_str)
    .unwrap_or_default()
    .to_string();

    let logprobs = match choice.get("logprobs") {
        None | Some(Value::Null) => return Ok((text, None)),
        Some(v) => v,
    };
    let pair = |tok: Option<&Value>, lp: Option<&Value>| -> Result<TokenEvent, ClientError> {
        let token = tok.and_then(Value::as_str).unwrap_or_default();
        let lp = lp
            .and_then(Value::as_f64)
            .ok_or_else(|| ClientError::Capability(format!("token {token:?} has no logprob")))?;
        Ok(TokenEvent::new(token, lp))
    };
    let tokens = match endpoint {
        Endpoint::Completions => {
            let toks = logprobs.get("tokens").and_then(Value::as_array);
            let lps = logprobs.get("token_logprobs").and_then(Value::as_array);
            match (toks, lps) {
                (Some(t), Some(l)) if t.len() == l.len() => t
                    .iter()
                    .zip(l)
                    .map(|(t, l)| pair(Some(t), Some(l)))
                    .collect::<Result<Vec<_>, _>>()?,
                (Some(_), Some(_)) => {
                    return Err(ClientError::Malformed(
                        "tokens and token_logprobs differ in length".into(),
                    ))
                }
                _ => return Ok((text, None)),
            }
        }
        Endpoint::Chat => match logprobs.get("content").and_then(Value::as_array) {
            Some(items) => items
                .iter()
                .map(|it| pair(it.get("token"), it.get("logprob")))
                .collect::<Result<Vec<_>, _>>()?,
            None => return Ok((text, None)),
        },
    };
    Ok((text, Some(tokens)))
}
