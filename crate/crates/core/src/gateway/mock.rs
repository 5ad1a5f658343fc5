//! Scripted offline backend.
//!
//! A fixture maps item ids (or source-image digests) to reply texts and can
//! inject a sequence of transient faults per item before the reply is given.
//!
//! ```json
//! {
//!   "default_reply": "{\"age\": \"1900-1919\", \"reason\": \"\"}",
//!   "replies": { "55": "{\"age\": \"1940-1959\", ...}" },
//!   "faults": { "55": ["transport", "rate_limited"] }
//! }
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendConfig, BackendResponse, GatewayError, TokenUsage};
use crate::prompting::ClassificationRequest;

pub const MOCK_DEFAULT_REPLY: &str = "I cannot determine the age.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Detailed {
        text: String,
        #[serde(default)]
        refused: bool,
        #[serde(default)]
        usage: Option<TokenUsage>,
        #[serde(default)]
        latency_seconds: Option<f64>,
    },
}

impl MockReply {
    fn text(&self) -> &str {
        match self {
            MockReply::Text(text) | MockReply::Detailed { text, .. } => text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Transport,
    RateLimited,
    Timeout,
    Auth,
}

impl FaultKind {
    fn into_error(self) -> GatewayError {
        match self {
            FaultKind::Transport => GatewayError::Transport("injected transport fault".into()),
            FaultKind::RateLimited => GatewayError::RateLimited { retry_after: None },
            FaultKind::Timeout => GatewayError::Timeout(Duration::ZERO),
            FaultKind::Auth => GatewayError::Auth("injected auth fault".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockFixture {
    pub backend_id: String,
    pub default_reply: String,
    pub replies: BTreeMap<u64, MockReply>,
    /// Replies keyed by source-image digest; consulted when no id entry exists.
    pub by_digest: BTreeMap<String, MockReply>,
    /// Faults returned, in order, before an item's reply is served.
    pub faults: BTreeMap<u64, Vec<FaultKind>>,
    pub default_usage: Option<TokenUsage>,
    /// Reported latency for every reply unless overridden per reply.
    pub latency_seconds: f64,
    /// Real time spent per call, for exercising concurrency.
    pub delay_ms: u64,
}

impl Default for MockFixture {
    fn default() -> Self {
        Self {
            backend_id: "mock".into(),
            default_reply: MOCK_DEFAULT_REPLY.into(),
            replies: BTreeMap::new(),
            by_digest: BTreeMap::new(),
            faults: BTreeMap::new(),
            default_usage: None,
            latency_seconds: 0.0,
            delay_ms: 0,
        }
    }
}

impl MockFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("mock fixture {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("mock fixture {}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct MockBackend {
    fixture: MockFixture,
    faults_served: Mutex<HashMap<u64, usize>>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    dispatch_times: Mutex<Vec<Instant>>,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        Self {
            fixture,
            faults_served: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            dispatch_times: Mutex::new(Vec::new()),
        }
    }

    pub fn fixture(&self) -> &MockFixture {
        &self.fixture
    }

    /// Calls received, faults included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of calls observed running at once.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// Arrival time of each call, sorted.
    pub fn dispatch_times(&self) -> Vec<Instant> {
        let mut times = self.dispatch_times.lock().unwrap_or_else(|e| e.into_inner()).clone();
        times.sort();
        times
    }

    fn lookup(&self, request: &ClassificationRequest) -> Option<&MockReply> {
        self.fixture
            .replies
            .get(&request.item_id)
            .or_else(|| self.fixture.by_digest.get(request.image.source_digest.as_str()))
    }

    fn pending_fault(&self, item_id: u64) -> Option<FaultKind> {
        let script = self.fixture.faults.get(&item_id)?;
        let mut served = self.faults_served.lock().unwrap_or_else(|e| e.into_inner());
        let count = served.entry(item_id).or_insert(0);
        let fault = script.get(*count).copied();
        if fault.is_some() {
            *count += 1;
        }
        fault
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.fixture.backend_id
    }

    fn complete(
        &self,
        request: &ClassificationRequest,
        _config: &BackendConfig,
    ) -> Result<BackendResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.dispatch_times
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(Instant::now());
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if self.fixture.delay_ms > 0 {
            thread::sleep(Duration::from_millis(self.fixture.delay_ms));
        }

        if let Some(fault) = self.pending_fault(request.item_id) {
            return Err(fault.into_error());
        }

        let reply = self.lookup(request);
        let text = reply.map_or(self.fixture.default_reply.as_str(), MockReply::text);
        let (refused, usage, latency) = match reply {
            Some(MockReply::Detailed {
                refused,
                usage,
                latency_seconds,
                ..
            }) => (
                *refused,
                usage.or(self.fixture.default_usage),
                latency_seconds.unwrap_or(self.fixture.latency_seconds),
            ),
            _ => (false, self.fixture.default_usage, self.fixture.latency_seconds),
        };
        Ok(BackendResponse {
            text: text.to_string(),
            usage,
            refused,
            reported_latency: Some(Duration::from_secs_f64(latency.max(0.0))),
        })
    }
}
