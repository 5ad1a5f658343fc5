//! Dispatch of classification requests to a vision-language backend.
//!
//! [`Gateway`] wraps a [`Backend`] with a content-addressed reply cache,
//! retry with exponential backoff, dispatch pacing and bounded concurrency.
//! Two backends ship with the crate: [`OpenAiBackend`] for live
//! chat-completions endpoints and [`MockBackend`] for offline, scripted runs.

mod cache;
mod mock;
mod openai;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompting::ClassificationRequest;

pub use cache::{CacheKey, CachedReply, ResponseCache};
pub use mock::{FaultKind, MockBackend, MockFixture, MockReply};
pub use openai::{chat_request_body, extract_chat_reply, OpenAiBackend};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4-vision-preview";
pub const DEFAULT_API_KEY_ENV: &str = "VLM_API_KEY";
/// Upper bound on a single backoff sleep.
const MAX_BACKOFF: Duration = Duration::from_secs(60);

/// Per-token prices, in currency units per thousand tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl Pricing {
    pub fn cost(&self, usage: &TokenUsage) -> f64 {
        usage.input as f64 * self.input_per_1k / 1000.0 + usage.output as f64 * self.output_per_1k / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Sampling temperature; `None` means 0.
    pub temperature: Option<f64>,
    pub max_output_tokens: u32,
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub min_request_interval: Duration,
    /// First backoff delay; doubles on each retry.
    pub retry_base_delay: Duration,
    pub pricing: Pricing,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: DEFAULT_ENDPOINT.into(),
            model_name: DEFAULT_MODEL.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            temperature: None,
            max_output_tokens: 500,
            request_timeout: Duration::from_secs(120),
            max_retries: 3,
            max_concurrency: 1,
            min_request_interval: Duration::ZERO,
            retry_base_delay: Duration::from_millis(500),
            pricing: Pricing::default(),
        }
    }
}

impl BackendConfig {
    pub fn effective_temperature(&self) -> f64 {
        self.temperature.unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |msg: &str| Err(GatewayError::Config(msg.to_string()));
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be at least 1");
        }
        if self.request_timeout.is_zero() {
            return bad("request_timeout must be positive");
        }
        if self.model_name.trim().is_empty() {
            return bad("model_name must not be empty");
        }
        if let Some(t) = self.temperature {
            if !t.is_finite() || t < 0.0 {
                return bad("temperature must be a finite non-negative number");
            }
        }
        if !(self.pricing.input_per_1k >= 0.0 && self.pricing.output_per_1k >= 0.0) {
            return bad("prices must be non-negative");
        }
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt);
        self.retry_base_delay.saturating_mul(factor).min(MAX_BACKOFF)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

/// A model reply together with its accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReply {
    pub item_id: u64,
    /// Reply text exactly as returned.
    pub text: String,
    pub latency_seconds: f64,
    pub token_usage: Option<TokenUsage>,
    pub cost_estimate: f64,
    pub from_cache: bool,
    pub backend_id: String,
    /// The backend filtered or declined the request.
    #[serde(default)]
    pub refused: bool,
}

impl RawReply {
    /// A zero-cost reply with no accounting, for tests and synthetic runs.
    pub fn synthetic(item_id: u64, text: impl Into<String>) -> Self {
        Self {
            item_id,
            text: text.into(),
            latency_seconds: 0.0,
            token_usage: None,
            cost_estimate: 0.0,
            from_cache: false,
            backend_id: "synthetic".into(),
            refused: false,
        }
    }

    /// Cost newly spent on this reply; cached replies cost nothing.
    pub fn new_cost(&self) -> f64 {
        if self.from_cache {
            0.0
        } else {
            self.cost_estimate
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("API key variable {0} is not set")]
    MissingApiKey(String),
    #[error("rate limited by backend")]
    RateLimited { retry_after: Option<Duration> },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend refused the request")]
    BackendRefusal(Box<RawReply>),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend response could not be understood: {0}")]
    InvalidResponse(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::RateLimited { .. } | GatewayError::Transport(_) | GatewayError::Timeout(_)
        )
    }
}

/// What a backend hands back for one attempt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackendResponse {
    pub text: String,
    pub usage: Option<TokenUsage>,
    pub refused: bool,
    /// Overrides the measured wall-clock latency (scripted backends).
    pub reported_latency: Option<Duration>,
}

/// A model endpoint. Implementations are shared across worker threads.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(
        &self,
        request: &ClassificationRequest,
        config: &BackendConfig,
    ) -> Result<BackendResponse, GatewayError>;
}

/// A request that yielded no usable reply.
#[derive(Debug, thiserror::Error)]
#[error("item {item_id}: {error}")]
pub struct ItemFailure {
    pub item_id: u64,
    #[source]
    pub error: GatewayError,
}

pub type BatchEntry = Result<RawReply, ItemFailure>;

/// Serializes dispatches so consecutive sends are at least `interval` apart.
#[derive(Debug)]
struct Pacer {
    interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl Pacer {
    fn wait(&self) {
        let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let ready = prev + self.interval;
            let now = Instant::now();
            if ready > now {
                thread::sleep(ready - now);
            }
        }
        *last = Some(Instant::now());
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: BackendConfig,
    cache: Option<ResponseCache>,
    pacer: Pacer,
    dispatches: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Self {
            backend,
            pacer: Pacer {
                interval: config.min_request_interval,
                last: Mutex::new(None),
            },
            config,
            cache: None,
            dispatches: AtomicUsize::new(0),
        })
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Number of calls actually sent to the backend, retries included.
    pub fn dispatch_count(&self) -> usize {
        self.dispatches.load(Ordering::Relaxed)
    }

    pub fn cache_key(&self, request: &ClassificationRequest) -> CacheKey {
        CacheKey::for_request(request, &self.config)
    }

    /// Classifies one request, answering from the cache when possible.
    pub fn classify(&self, request: &ClassificationRequest) -> Result<RawReply, GatewayError> {
        let key = self.cache_key(request);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit.into_reply(request.item_id));
        }
        self.dispatch(request, &key)
    }

    /// Classifies one request, skipping the cache lookup. The fresh reply
    /// replaces any cached one.
    pub fn classify_fresh(&self, request: &ClassificationRequest) -> Result<RawReply, GatewayError> {
        let key = self.cache_key(request);
        self.dispatch(request, &key)
    }

    fn dispatch(&self, request: &ClassificationRequest, key: &CacheKey) -> Result<RawReply, GatewayError> {
        let mut attempt = 0;
        loop {
            self.pacer.wait();
            self.dispatches.fetch_add(1, Ordering::Relaxed);
            let started = Instant::now();
            match self.backend.complete(request, &self.config) {
                Ok(response) => {
                    let elapsed = response.reported_latency.unwrap_or_else(|| started.elapsed());
                    let reply = RawReply {
                        item_id: request.item_id,
                        cost_estimate: response.usage.as_ref().map_or(0.0, |u| self.config.pricing.cost(u)),
                        text: response.text,
                        latency_seconds: elapsed.as_secs_f64(),
                        token_usage: response.usage,
                        from_cache: false,
                        backend_id: self.backend.id().to_string(),
                        refused: response.refused,
                    };
                    if reply.refused {
                        return Err(GatewayError::BackendRefusal(Box::new(reply)));
                    }
                    if let Some(cache) = &self.cache {
                        if let Err(e) = cache.put(key, &reply) {
                            log::warn!("item {}: failed to write cache entry {key}: {e}", request.item_id);
                        }
                    }
                    return Ok(reply);
                }
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    let mut delay = self.config.backoff(attempt);
                    if let GatewayError::RateLimited {
                        retry_after: Some(after),
                    } = &e
                    {
                        delay = delay.max(*after).min(MAX_BACKOFF);
                    }
                    log::warn!(
                        "item {}: {e}; retrying in {delay:?} (attempt {}/{})",
                        request.item_id,
                        attempt + 1,
                        self.config.max_retries
                    );
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Classifies every request, keeping input order. At most
    /// `max_concurrency` requests are in flight; a failing item never aborts
    /// the batch.
    pub fn run_batch(&self, requests: &[ClassificationRequest]) -> Vec<BatchEntry> {
        let run_one = |request: &ClassificationRequest| {
            self.classify(request).map_err(|error| ItemFailure {
                item_id: request.item_id,
                error,
            })
        };
        let workers = self.config.max_concurrency.min(requests.len());
        if workers <= 1 {
            return requests.iter().map(run_one).collect();
        }

        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<BatchEntry>>> = requests.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(request) = requests.get(i) else { break };
                    let entry = run_one(request);
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(entry);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .unwrap_or_else(|e| e.into_inner())
                    .expect("every slot is filled once the scope joins")
            })
            .collect()
    }
}

/// Hex SHA-256 over length-prefixed fields. Used for cache keys.
pub(crate) fn digest_fields(fields: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for field in fields {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field);
    }
    hex::encode(hasher.finalize())
}
