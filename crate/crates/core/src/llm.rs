//! Chat-completion access for the two prompting stages.
//!
//! Providers: `http` speaks a generic JSON chat-completion shape and `replay`
//! answers from a directory of `<fingerprint>.txt` files. The gateway wraps a
//! provider with a requests-per-minute limiter and optional recording.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

pub const ENV_API_KEY: &str = "SPECVERIFY_API_KEY";
pub const ENV_ENDPOINT: &str = "SPECVERIFY_ENDPOINT";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider unavailable after {attempts} attempt(s): {last_error}")]
    ProviderUnavailable { attempts: u32, last_error: String },
    #[error("provider rejected credentials (HTTP {status})")]
    AuthFailure { status: u16 },
    #[error("provider rejected request (HTTP {status}): {body}")]
    RequestRejected { status: u16, body: String },
    #[error("provider returned an empty response")]
    ResponseEmpty,
    #[error("provider response is not in the expected shape: {0}")]
    MalformedResponse(String),
    #[error("no replay entry for fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("exchange already carries a response")]
    AlreadyCompleted,
    #[error("exchange has no response to record")]
    NotCompleted,
    #[error("environment variable {0} is not set")]
    MissingApiKey(&'static str),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot write replay entry {path}: {source}")]
    StoreWriteFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Formalize,
    SynthesizeAssertions,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Formalize => "formalize",
            Stage::SynthesizeAssertions => "synthesize_assertions",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExchange {
    pub stage: Stage,
    pub system_text: String,
    pub user_text: String,
    pub response_text: String,
    pub provider_id: String,
    pub fingerprint: String,
}

impl PromptExchange {
    pub fn new(stage: Stage, system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        let system_text = system_text.into();
        let user_text = user_text.into();
        let fingerprint = fingerprint(stage, &system_text, &user_text);
        Self {
            stage,
            system_text,
            user_text,
            response_text: String::new(),
            provider_id: String::new(),
            fingerprint,
        }
    }

    pub fn is_completed(&self) -> bool {
        !self.response_text.is_empty()
    }
}

/// SHA-256 over stage, system text and user text, NUL separated.
pub fn fingerprint(stage: Stage, system_text: &str, user_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(stage.as_str().as_bytes());
    h.update([0u8]);
    h.update(system_text.as_bytes());
    h.update([0u8]);
    h.update(user_text.as_bytes());
    hex::encode(h.finalize())
}

fn default_max_retries() -> u32 {
    3
}
fn default_timeout_secs() -> f64 {
    120.0
}
fn default_response_path() -> String {
    "choices.0.message.content".into()
}
fn default_auth_header() -> String {
    "Authorization".into()
}
fn default_auth_prefix() -> String {
    "Bearer ".into()
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_backoff_ms() -> u64 {
    30_000
}

/// HTTP provider settings. Secrets never live here; the API key is read from
/// `SPECVERIFY_API_KEY`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub temperature: f64,
    /// Dotted path to the assistant text, numeric segments index arrays.
    #[serde(default = "default_response_path")]
    pub response_path: String,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_prefix")]
    pub auth_prefix: String,
    /// Extra static headers, e.g. a vendor API version.
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    /// When set, the system prompt goes into this top-level body field
    /// instead of a `system` role message.
    #[serde(default)]
    pub system_field: Option<String>,
    /// Extra top-level body fields, e.g. `max_tokens`.
    #[serde(default)]
    pub extra_body: serde_json::Map<String, Value>,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_max_backoff_ms")]
    pub max_backoff_ms: u64,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model_name: String::new(),
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            temperature: 0.0,
            response_path: default_response_path(),
            auth_header: default_auth_header(),
            auth_prefix: default_auth_prefix(),
            headers: Vec::new(),
            system_field: None,
            extra_body: serde_json::Map::new(),
            backoff_base_ms: default_backoff_ms(),
            max_backoff_ms: default_max_backoff_ms(),
            requests_per_minute: None,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_secs > 0.0) {
            return Err(LlmError::InvalidConfig("timeout must be positive".into()));
        }
        if self.endpoint.is_empty() {
            return Err(LlmError::InvalidConfig("endpoint is empty".into()));
        }
        reqwest::Url::parse(&self.endpoint)
            .map_err(|e| LlmError::InvalidConfig(format!("endpoint: {e}")))?;
        if self.requests_per_minute == Some(0) {
            return Err(LlmError::InvalidConfig("requests_per_minute must be positive".into()));
        }
        Ok(())
    }

    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }

    /// Request body for one exchange.
    pub fn request_body(&self, exchange: &PromptExchange) -> Value {
        let mut messages = Vec::new();
        let mut body = serde_json::Map::new();
        match &self.system_field {
            Some(field) => {
                body.insert(field.clone(), Value::String(exchange.system_text.clone()));
            }
            None => messages.push(json!({"role": "system", "content": exchange.system_text})),
        }
        messages.push(json!({"role": "user", "content": exchange.user_text}));
        body.insert("model".into(), Value::String(self.model_name.clone()));
        body.insert("messages".into(), Value::Array(messages));
        body.insert("temperature".into(), json!(self.temperature));
        for (k, v) in &self.extra_body {
            body.insert(k.clone(), v.clone());
        }
        Value::Object(body)
    }
}

/// Walks a dotted path such as `choices.0.message.content`.
pub fn extract_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.')
        .filter(|s| !s.is_empty())
        .try_fold(value, |v, seg| match seg.parse::<usize>() {
            Ok(i) => v.get(i),
            Err(_) => v.get(seg),
        })
}

pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn send(&self, exchange: &PromptExchange) -> Result<String, LlmError>;
}

/// Answers from `<store>/<fingerprint>.txt`.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    store: PathBuf,
}

impl ReplayProvider {
    pub fn new(store: impl Into<PathBuf>) -> Self {
        Self {
            store: store.into(),
        }
    }

    pub fn store(&self) -> &Path {
        &self.store
    }
}

impl Provider for ReplayProvider {
    fn id(&self) -> &str {
        "replay"
    }

    fn send(&self, exchange: &PromptExchange) -> Result<String, LlmError> {
        let path = entry_path(&self.store, &exchange.fingerprint);
        fs::read_to_string(&path).map_err(|_| LlmError::ReplayMiss {
            fingerprint: exchange.fingerprint.clone(),
        })
    }
}

/// Answers from hand-written files `<dir>/<requirement id>.<stage>.txt`,
/// where the id is read from the first line of the user prompt
/// (`Requirement <id> ...`). Used with recording to build replay stores.
#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    dir: PathBuf,
}

impl ScriptedProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

fn prompt_requirement_id(user_text: &str) -> Option<&str> {
    let rest = user_text.lines().next()?.strip_prefix("Requirement ")?;
    let id = rest.split(|c: char| c.is_whitespace()).next()?.trim_end_matches(['.', ':']);
    (!id.is_empty()).then_some(id)
}

impl Provider for ScriptedProvider {
    fn id(&self) -> &str {
        "scripted"
    }

    fn send(&self, exchange: &PromptExchange) -> Result<String, LlmError> {
        let id = prompt_requirement_id(&exchange.user_text).ok_or_else(|| {
            LlmError::InvalidConfig("user prompt does not start with `Requirement <id>`".into())
        })?;
        let path = self.dir.join(format!("{id}.{}.txt", exchange.stage.as_str()));
        fs::read_to_string(&path).map_err(|e| LlmError::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

pub struct HttpProvider {
    cfg: ProviderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Done(String),
    Transient(String, Option<Duration>),
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            cfg,
            api_key,
            client,
        })
    }

    /// Builds a provider using `SPECVERIFY_ENDPOINT` (if set) and the
    /// required `SPECVERIFY_API_KEY`.
    pub fn from_env(mut cfg: ProviderConfig) -> Result<Self, LlmError> {
        if let Ok(endpoint) = std::env::var(ENV_ENDPOINT) {
            if !endpoint.is_empty() {
                cfg.endpoint = endpoint;
            }
        }
        let key = std::env::var(ENV_API_KEY).map_err(|_| LlmError::MissingApiKey(ENV_API_KEY))?;
        Self::new(cfg, Some(key))
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn attempt(&self, body: &Value) -> Result<Attempt, LlmError> {
        let mut req = self.client.post(&self.cfg.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.header(
                self.cfg.auth_header.as_str(),
                format!("{}{}", self.cfg.auth_prefix, key),
            );
        }
        for (k, v) in &self.cfg.headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Transient(e.to_string(), None)),
        };
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(LlmError::AuthFailure {
                status: status.as_u16(),
            });
        }
        if status.as_u16() == 429 || status.is_server_error() {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Ok(Attempt::Transient(format!("HTTP {status}"), retry_after));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(LlmError::RequestRejected {
                status: status.as_u16(),
                body,
            });
        }
        let value: Value = match resp.json() {
            Ok(v) => v,
            Err(e) => return Ok(Attempt::Transient(format!("body: {e}"), None)),
        };
        let text = extract_path(&value, &self.cfg.response_path)
            .ok_or_else(|| {
                LlmError::MalformedResponse(format!("no value at `{}`", self.cfg.response_path))
            })?
            .as_str()
            .ok_or_else(|| {
                LlmError::MalformedResponse(format!("`{}` is not a string", self.cfg.response_path))
            })?;
        Ok(Attempt::Done(text.to_string()))
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> &str {
        "http"
    }

    fn send(&self, exchange: &PromptExchange) -> Result<String, LlmError> {
        let body = self.cfg.request_body(exchange);
        let max_backoff = Duration::from_millis(self.cfg.max_backoff_ms);
        let mut attempt = 0u32;
        loop {
            match self.attempt(&body)? {
                Attempt::Done(text) => return Ok(text),
                Attempt::Transient(reason, retry_after) => {
                    if attempt >= self.cfg.max_retries {
                        return Err(LlmError::ProviderUnavailable {
                            attempts: attempt + 1,
                            last_error: reason,
                        });
                    }
                    let delay = retry_after
                        .map(|d| d.min(max_backoff))
                        .unwrap_or_else(|| self.cfg.backoff(attempt));
                    warn!(attempt, %reason, delay_ms = delay.as_millis() as u64, "transient provider failure, retrying");
                    thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

/// Spaces requests so that no more than `per_minute` start in any minute.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(per_minute: Option<u32>) -> Self {
        Self {
            interval: per_minute
                .filter(|&n| n > 0)
                .map(|n| Duration::from_secs_f64(60.0 / f64::from(n))),
            next_slot: Mutex::new(None),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    pub fn acquire(&self) {
        let Some(interval) = self.interval else {
            return;
        };
        let wait = {
            let mut next = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + interval);
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

pub struct Gateway {
    provider: Box<dyn Provider>,
    limiter: RateLimiter,
    record_to: Option<PathBuf>,
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>) -> Self {
        Self {
            provider,
            limiter: RateLimiter::unlimited(),
            record_to: None,
        }
    }

    pub fn replay(store: impl Into<PathBuf>) -> Self {
        Self::new(Box::new(ReplayProvider::new(store)))
    }

    pub fn with_rate_limit(mut self, per_minute: Option<u32>) -> Self {
        self.limiter = RateLimiter::new(per_minute);
        self
    }

    /// Persist every completed exchange into `store`.
    pub fn recording_to(mut self, store: impl Into<PathBuf>) -> Self {
        self.record_to = Some(store.into());
        self
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn complete(&self, mut exchange: PromptExchange) -> Result<PromptExchange, LlmError> {
        if exchange.is_completed() {
            return Err(LlmError::AlreadyCompleted);
        }
        self.limiter.acquire();
        let text = self.provider.send(&exchange)?;
        if text.trim().is_empty() {
            return Err(LlmError::ResponseEmpty);
        }
        debug!(stage = %exchange.stage, fingerprint = %exchange.fingerprint, provider = self.provider.id(), "completed exchange");
        exchange.response_text = text;
        exchange.provider_id = self.provider.id().to_string();
        if let Some(store) = &self.record_to {
            record(&exchange, store)?;
        }
        Ok(exchange)
    }
}

fn entry_path(store: &Path, fingerprint: &str) -> PathBuf {
    store.join(format!("{fingerprint}.txt"))
}

/// Stores a completed exchange under its fingerprint. Rewriting identical
/// content leaves the file untouched.
pub fn record(exchange: &PromptExchange, store: &Path) -> Result<(), LlmError> {
    if !exchange.is_completed() {
        return Err(LlmError::NotCompleted);
    }
    let path = entry_path(store, &exchange.fingerprint);
    let fail = |source| LlmError::StoreWriteFailure {
        path: path.clone(),
        source,
    };
    if fs::read_to_string(&path).is_ok_and(|existing| existing == exchange.response_text) {
        return Ok(());
    }
    fs::create_dir_all(store).map_err(fail)?;
    let mut tmp = tempfile::NamedTempFile::new_in(store).map_err(fail)?;
    tmp.write_all(exchange.response_text.as_bytes()).map_err(fail)?;
    tmp.persist(&path).map_err(|e| fail(e.error))?;
    Ok(())
}
