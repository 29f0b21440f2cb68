//! Completion and embedding providers behind one content-addressed
//! record/replay cache.
//!
//! Every request has a canonical JSON form (object keys sorted, numbers in
//! shortest round-trip notation); its SHA-256 is the cache key. In
//! [`Mode::Replay`] the gateway answers from the cache only and never calls
//! its [`Transport`]. [`Mode::Record`] calls the provider and appends the
//! answer to the cache; [`Mode::Live`] calls the provider and keeps nothing.

mod cache;
mod hashing;
mod transport;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use cache::{CacheRecord, RecordStore};
pub use hashing::{fnv1a64, test_embedder};
pub use transport::{HttpRequest, HttpResponse, OfflineTransport, ReqwestTransport, Transport};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cache miss for key {key}")]
    CacheMiss { key: String },
    #[error("HTTP {status}: {excerpt}")]
    Http { status: u16, excerpt: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

impl GatewayError {
    pub fn is_cache_miss(&self) -> bool {
        matches!(self, GatewayError::CacheMiss { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    #[default]
    Replay,
    Record,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "replay" => Ok(Mode::Replay),
            "record" => Ok(Mode::Record),
            other => Err(format!("unknown mode {other:?} (expected live, replay or record)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Live => "live",
            Mode::Replay => "replay",
            Mode::Record => "record",
        })
    }
}

/// Serializes `value` with object keys sorted at every depth.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    fn write(v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                let mut entries: Vec<_> = map.iter().collect();
                entries.sort_by(|a, b| a.0.cmp(b.0));
                out.push('{');
                for (i, (k, v)) in entries.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("string keys serialize"));
                    out.push(':');
                    write(v, out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(v, out);
                }
                out.push(']');
            }
            scalar => out.push_str(&scalar.to_string()),
        }
    }
    let value = serde_json::to_value(value).expect("request types serialize to JSON");
    let mut out = String::new();
    write(&value, &mut out);
    out
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be a finite non-negative number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        canonical_json(self)
    }

    pub fn key(&self) -> String {
        sha256_hex(&self.canonical())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub key: String,
    pub request: CompletionRequest,
    pub response_text: String,
    pub provider: String,
    pub created_at: String,
}

impl CacheRecord for CompletionRecord {
    fn key(&self) -> &str {
        &self.key
    }

    fn expected_key(&self) -> String {
        self.request.key()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub model: String,
    pub input: String,
}

impl EmbeddingRequest {
    pub fn new(model: impl Into<String>, input: impl Into<String>) -> Self {
        EmbeddingRequest {
            model: model.into(),
            input: input.into(),
        }
    }

    pub fn key(&self) -> String {
        sha256_hex(&canonical_json(self))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub key: String,
    pub request: EmbeddingRequest,
    pub embedding: Vec<f64>,
    pub provider: String,
    pub created_at: String,
}

impl CacheRecord for EmbeddingRecord {
    fn key(&self) -> &str {
        &self.key
    }

    fn expected_key(&self) -> String {
        self.request.key()
    }
}

fn default_base_url() -> String {
    "https://api.openai.com/v1".into()
}
fn default_model() -> String {
    "davinci".into()
}
fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    64
}
fn default_parallelism() -> usize {
    4
}
fn default_rate() -> f64 {
    60.0
}
fn default_api_key_env() -> Option<String> {
    Some("OPENAI_API_KEY".into())
}
fn default_provider() -> String {
    "openai-compatible".into()
}
fn default_retries() -> u32 {
    5
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_backoff_cap_ms() -> u64 {
    30_000
}
fn default_timeout_secs() -> u64 {
    60
}

/// Provider settings, readable from the `gateway` section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default = "default_base_url")]
    pub base_url: String,
    /// Completion model.
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub stop: Option<Vec<String>>,
    /// Maximum in-flight live requests.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Token-bucket refill rate; zero disables limiting.
    #[serde(default = "default_rate")]
    pub rate_per_minute: f64,
    #[serde(default)]
    pub mode: Mode,
    /// Name of the environment variable holding the bearer token. `None`
    /// sends unauthenticated requests.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_provider")]
    pub provider: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_initial_ms: u64,
    #[serde(default = "default_backoff_cap_ms")]
    pub backoff_cap_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl GatewayConfig {
    /// A completion request for `prompt` using the configured decoding knobs.
    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            prompt: prompt.into(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            stop: self.stop.clone(),
        }
    }
}

struct TokenBucket {
    per_second: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate_per_minute: f64, capacity: usize) -> Self {
        let capacity = capacity.max(1) as f64;
        TokenBucket {
            per_second: rate_per_minute / 60.0,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    fn acquire(&self) {
        if self.per_second <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.per_second;
                state.0 = (state.0 + refill).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / self.per_second
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// The single entry point to external model providers.
pub struct Gateway {
    config: GatewayConfig,
    transport: Arc<dyn Transport>,
    limiter: TokenBucket,
    completions: RecordStore<CompletionRecord>,
    embeddings: RecordStore<EmbeddingRecord>,
    calls: AtomicUsize,
}

impl Gateway {
    pub fn new(config: GatewayConfig, transport: Arc<dyn Transport>) -> Self {
        let limiter = TokenBucket::new(config.rate_per_minute, config.parallelism);
        Gateway {
            config,
            transport,
            limiter,
            completions: RecordStore::in_memory(),
            embeddings: RecordStore::in_memory(),
            calls: AtomicUsize::new(0),
        }
    }

    /// A replay-only gateway that cannot reach the network.
    pub fn offline(config: GatewayConfig) -> Self {
        let config = GatewayConfig {
            mode: Mode::Replay,
            ..config
        };
        Gateway::new(config, Arc::new(OfflineTransport::new()))
    }

    pub fn with_completion_cache(mut self, store: RecordStore<CompletionRecord>) -> Self {
        self.completions = store;
        self
    }

    pub fn with_embedding_cache(mut self, store: RecordStore<EmbeddingRecord>) -> Self {
        self.embeddings = store;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn completion_cache(&self) -> &RecordStore<CompletionRecord> {
        &self.completions
    }

    pub fn embedding_cache(&self) -> &RecordStore<EmbeddingRecord> {
        &self.embeddings
    }

    /// Number of provider calls attempted through the transport.
    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let key = request.key();
        match self.config.mode {
            Mode::Replay => self
                .completions
                .get(&key)
                .map(|r| r.response_text)
                .ok_or(GatewayError::CacheMiss { key }),
            Mode::Live => self.call_completion(request),
            Mode::Record => {
                let text = self.call_completion(request)?;
                self.completions.append(CompletionRecord {
                    key,
                    request: request.clone(),
                    response_text: text.clone(),
                    provider: self.config.provider.clone(),
                    created_at: now_iso8601(),
                })?;
                Ok(text)
            }
        }
    }

    /// Completes every request, at most `parallelism` at a time. Results come
    /// back in request order.
    pub fn complete_many(&self, requests: &[CompletionRequest]) -> Vec<Result<String, GatewayError>> {
        self.run_ordered(requests, |r| self.complete(r))
    }

    pub fn embed(&self, request: &EmbeddingRequest) -> Result<Vec<f64>, GatewayError> {
        let key = request.key();
        match self.config.mode {
            Mode::Replay => self
                .embeddings
                .get(&key)
                .map(|r| r.embedding)
                .ok_or(GatewayError::CacheMiss { key }),
            Mode::Live => self.call_embedding(request),
            Mode::Record => {
                let embedding = self.call_embedding(request)?;
                self.embeddings.append(EmbeddingRecord {
                    key,
                    request: request.clone(),
                    embedding: embedding.clone(),
                    provider: self.config.provider.clone(),
                    created_at: now_iso8601(),
                })?;
                Ok(embedding)
            }
        }
    }

    pub fn embed_many(&self, requests: &[EmbeddingRequest]) -> Vec<Result<Vec<f64>, GatewayError>> {
        self.run_ordered(requests, |r| self.embed(r))
    }

    fn run_ordered<T, U, F>(&self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync,
    {
        let workers = match self.config.mode {
            Mode::Replay => 1,
            _ => self.config.parallelism.max(1).min(items.len()),
        };
        if workers <= 1 {
            return items.iter().map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<U>>> = items.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let out = f(&items[i]);
                    *slots[i].lock().unwrap() = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().unwrap().expect("every slot is filled"))
            .collect()
    }

    fn call_completion(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let mut body = serde_json::json!({
            "model": request.model,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if let Some(stop) = &request.stop {
            body["stop"] = serde_json::json!(stop);
        }
        let reply = self.post("completions", &body)?;
        reply
            .pointer("/choices/0/text")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| GatewayError::BadResponse("missing choices[0].text".into()))
    }

    fn call_embedding(&self, request: &EmbeddingRequest) -> Result<Vec<f64>, GatewayError> {
        let body = serde_json::json!({ "model": request.model, "input": request.input });
        let reply = self.post("embeddings", &body)?;
        let values = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::BadResponse("missing data[0].embedding".into()))?;
        let vector: Option<Vec<f64>> = values.iter().map(Value::as_f64).collect();
        match vector {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(GatewayError::BadResponse("embedding is empty or not numeric".into())),
        }
    }

    fn post(&self, endpoint: &str, body: &Value) -> Result<Value, GatewayError> {
        let bearer = match &self.config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| GatewayError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let request = HttpRequest {
            url: format!("{}/{endpoint}", self.config.base_url.trim_end_matches('/')),
            bearer,
            body: body.to_string(),
        };
        let mut attempt = 0u32;
        loop {
            self.limiter.acquire();
            self.calls.fetch_add(1, Ordering::SeqCst);
            let reply = self.transport.post(&request).map_err(GatewayError::Transport)?;
            attempt += 1;
            match reply.status {
                200..=299 => {
                    return serde_json::from_str(&reply.body).map_err(|e| GatewayError::BadResponse(e.to_string()))
                }
                429 if attempt <= self.config.max_retries => {
                    let factor = 1u64 << (attempt - 1).min(20);
                    let delay = self
                        .config
                        .backoff_initial_ms
                        .saturating_mul(factor)
                        .min(self.config.backoff_cap_ms);
                    log::warn!("rate limited by provider; retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                }
                429 => return Err(GatewayError::RateLimited { attempts: attempt }),
                status => {
                    return Err(GatewayError::Http {
                        status,
                        excerpt: reply.body.chars().take(200).collect(),
                    })
                }
            }
        }
    }
}

fn now_iso8601() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    /// Scripted provider: pops canned replies and records what it was sent.
    struct Scripted {
        replies: Mutex<VecDeque<HttpResponse>>,
        seen: Mutex<Vec<HttpRequest>>,
    }

    impl Scripted {
        fn new(replies: Vec<(u16, &str)>) -> Arc<Self> {
            Arc::new(Scripted {
                replies: Mutex::new(
                    replies
                        .into_iter()
                        .map(|(status, body)| HttpResponse {
                            status,
                            body: body.to_string(),
                        })
                        .collect(),
                ),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl Transport for Scripted {
        fn post(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
            self.seen.lock().unwrap().push(request.clone());
            self.replies
                .lock()
                .unwrap()
                .pop_front()
                .ok_or_else(|| "script exhausted".to_string())
        }
    }

    fn config(mode: Mode) -> GatewayConfig {
        GatewayConfig {
            mode,
            api_key_env: None,
            rate_per_minute: 0.0,
            backoff_initial_ms: 1,
            backoff_cap_ms: 2,
            ..GatewayConfig::default()
        }
    }

    fn completion_body(text: &str) -> String {
        serde_json::json!({ "choices": [{ "text": text }] }).to_string()
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = GatewayConfig::default();
        assert_eq!(c.temperature, 0.7);
        assert_eq!(c.max_tokens, 64);
        assert_eq!(c.stop, None);
        assert_eq!(c.parallelism, 4);
        assert_eq!(c.mode, Mode::Replay);
    }

    #[test]
    fn canonical_form_sorts_keys() {
        let r = CompletionRequest {
            model: "m".into(),
            prompt: "p\n".into(),
            max_tokens: 64,
            temperature: 0.7,
            stop: None,
        };
        assert_eq!(
            r.canonical(),
            r#"{"max_tokens":64,"model":"m","prompt":"p\n","temperature":0.7}"#
        );
        let with_stop = CompletionRequest {
            stop: Some(vec!["\n".into()]),
            ..r.clone()
        };
        assert_ne!(with_stop.key(), r.key());
        assert_eq!(r.key().len(), 64);
    }

    #[test]
    fn canonical_form_ignores_field_order() {
        let a: CompletionRequest =
            serde_json::from_str(r#"{"prompt":"x","model":"m","temperature":0.5,"max_tokens":3}"#).unwrap();
        let b: CompletionRequest =
            serde_json::from_str(r#"{"max_tokens":3,"temperature":0.5,"model":"m","prompt":"x"}"#).unwrap();
        assert_eq!(a.key(), b.key());
    }

    #[test]
    fn replay_hit_and_miss() {
        let offline = Arc::new(OfflineTransport::new());
        let store = RecordStore::in_memory();
        let req = config(Mode::Replay).request("Who?");
        store
            .append(CompletionRecord {
                key: req.key(),
                request: req.clone(),
                response_text: " Simba".into(),
                provider: "fixture".into(),
                created_at: "2022-01-01T00:00:00Z".into(),
            })
            .unwrap();
        let gw = Gateway::new(config(Mode::Replay), offline.clone()).with_completion_cache(store);
        assert_eq!(gw.complete(&req).unwrap(), " Simba");
        let other = config(Mode::Replay).request("Who else?");
        match gw.complete(&other) {
            Err(GatewayError::CacheMiss { key }) => assert_eq!(key, other.key()),
            r => panic!("expected cache miss, got {r:?}"),
        }
        assert_eq!(offline.attempts(), 0);
    }

    #[test]
    fn record_then_replay_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let script = Scripted::new(vec![(200, &completion_body(" Scar"))]);
        let recorder =
            Gateway::new(config(Mode::Record), script.clone()).with_completion_cache(RecordStore::open(&path).unwrap());
        let req = recorder.config().request("Who is the villain?");
        assert_eq!(recorder.complete(&req).unwrap(), " Scar");
        let sent: Value = serde_json::from_str(&script.seen.lock().unwrap()[0].body).unwrap();
        assert_eq!(sent["prompt"], "Who is the villain?");
        assert!(script.seen.lock().unwrap()[0].url.ends_with("/v1/completions"));

        let offline = Arc::new(OfflineTransport::new());
        let replayer = Gateway::new(config(Mode::Replay), offline.clone())
            .with_completion_cache(RecordStore::open(&path).unwrap());
        assert_eq!(replayer.complete(&req).unwrap(), " Scar");
        assert_eq!(offline.attempts(), 0);
        let line = std::fs::read_to_string(&path).unwrap();
        let rec: Value = serde_json::from_str(line.trim()).unwrap();
        for field in ["key", "request", "response_text", "provider", "created_at"] {
            assert!(rec.get(field).is_some(), "{field}");
        }
    }

    #[test]
    fn last_record_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let req = config(Mode::Replay).request("q");
        let store = RecordStore::open(&path).unwrap();
        for text in ["first", "second"] {
            store
                .append(CompletionRecord {
                    key: req.key(),
                    request: req.clone(),
                    response_text: text.into(),
                    provider: "p".into(),
                    created_at: now_iso8601(),
                })
                .unwrap();
        }
        let reopened = RecordStore::<CompletionRecord>::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.get(&req.key()).unwrap().response_text, "second");
    }

    #[test]
    fn corrupt_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let req = config(Mode::Replay).request("q");
        let rec = CompletionRecord {
            key: "00".repeat(32),
            request: req,
            response_text: "x".into(),
            provider: "p".into(),
            created_at: now_iso8601(),
        };
        std::fs::write(&path, serde_json::to_string(&rec).unwrap() + "\n").unwrap();
        assert!(matches!(
            RecordStore::<CompletionRecord>::open(&path),
            Err(GatewayError::Cache { .. })
        ));
    }

    #[test]
    fn retries_rate_limit_then_succeeds() {
        let script = Scripted::new(vec![
            (429, "slow down"),
            (429, "slow down"),
            (200, &completion_body("ok")),
        ]);
        let gw = Gateway::new(config(Mode::Live), script.clone());
        assert_eq!(gw.complete(&gw.config().request("q")).unwrap(), "ok");
        assert_eq!(gw.provider_calls(), 3);
    }

    #[test]
    fn gives_up_after_retry_cap() {
        let cfg = GatewayConfig {
            max_retries: 1,
            ..config(Mode::Live)
        };
        let script = Scripted::new(vec![(429, ""), (429, ""), (200, &completion_body("late"))]);
        let gw = Gateway::new(cfg, script);
        assert!(matches!(
            gw.complete(&gw.config().request("q")),
            Err(GatewayError::RateLimited { attempts: 2 })
        ));
    }

    #[test]
    fn http_error_carries_status_and_excerpt() {
        let long = "e".repeat(1000);
        let script = Scripted::new(vec![(500, &long)]);
        let gw = Gateway::new(config(Mode::Live), script);
        match gw.complete(&gw.config().request("q")) {
            Err(GatewayError::Http { status, excerpt }) => {
                assert_eq!(status, 500);
                assert_eq!(excerpt.len(), 200);
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn missing_api_key_is_reported() {
        let cfg = GatewayConfig {
            api_key_env: Some("ROLECAST_TEST_KEY_THAT_IS_NOT_SET".into()),
            ..config(Mode::Live)
        };
        let gw = Gateway::new(cfg, Arc::new(OfflineTransport::new()));
        assert!(matches!(
            gw.complete(&gw.config().request("q")),
            Err(GatewayError::MissingApiKey(_))
        ));
    }

    #[test]
    fn parallel_results_keep_request_order() {
        struct Echo;
        impl Transport for Echo {
            fn post(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
                let v: Value = serde_json::from_str(&request.body).unwrap();
                let prompt = v["prompt"].as_str().unwrap().to_string();
                let n: u64 = prompt.parse().unwrap();
                thread::sleep(Duration::from_millis((20 - n % 20) / 4));
                Ok(HttpResponse {
                    status: 200,
                    body: completion_body(&prompt),
                })
            }
        }
        let gw = Gateway::new(config(Mode::Live), Arc::new(Echo));
        let reqs: Vec<_> = (0..40).map(|i| gw.config().request(i.to_string())).collect();
        let out: Vec<String> = gw.complete_many(&reqs).into_iter().map(Result::unwrap).collect();
        let expected: Vec<String> = (0..40).map(|i| i.to_string()).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn embedding_replay_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let script = Scripted::new(vec![
            (200, r#"{"data":[{"embedding":[0.1,0.2,0.3]}]}"#),
            (200, r#"{"data":[{"embedding":[0.3,0.2,0.1]}]}"#),
        ]);
        let rec = Gateway::new(config(Mode::Record), script).with_embedding_cache(RecordStore::open(&path).unwrap());
        let a = EmbeddingRequest::new("sbert", "The troops");
        let b = EmbeddingRequest::new("sbert", "The veterans");
        rec.embed(&a).unwrap();
        rec.embed(&b).unwrap();

        let gw = Gateway::offline(config(Mode::Replay)).with_embedding_cache(RecordStore::open(&path).unwrap());
        let va = gw.embed(&a).unwrap();
        assert_eq!(va, gw.embed(&a).unwrap());
        assert_eq!(va.len(), gw.embed(&b).unwrap().len());
        assert!(gw
            .embed(&EmbeddingRequest::new("sbert", "new"))
            .unwrap_err()
            .is_cache_miss());
        assert_eq!(gw.provider_calls(), 0);
    }

    #[test]
    fn invalid_requests_rejected() {
        let gw = Gateway::offline(config(Mode::Replay));
        let mut r = gw.config().request("");
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
        r.prompt = "x".into();
        r.max_tokens = 0;
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
    }

    proptest! {
        #[test]
        fn record_replay_is_bit_exact(prompt in "\\PC{1,40}", answer in "\\PC{0,40}", temp in 0.0f64..2.0) {
            let cfg = GatewayConfig { temperature: temp, ..config(Mode::Record) };
            let script = Scripted::new(vec![(200, &completion_body(&answer))]);
            let gw = Gateway::new(cfg.clone(), script);
            let req = cfg.request(prompt);
            let recorded = gw.complete(&req).unwrap();
            let replay = Gateway::offline(cfg).with_completion_cache(gw.completions);
            prop_assert_eq!(replay.complete(&req).unwrap(), recorded);
            prop_assert_eq!(replay.provider_calls(), 0);
        }
    }
}
