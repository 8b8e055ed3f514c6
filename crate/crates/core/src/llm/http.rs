use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

/// Raw HTTP reply: any status, body as text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// The single network primitive the live backend needs. Swappable so tests
/// can script replies and count calls.
pub trait HttpTransport: Send + Sync {
    /// Errors are connection-level failures; HTTP error statuses come back
    /// as an `HttpReply`.
    fn post_json(
        &self,
        url: &str,
        headers: &[(&str, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new() -> Self {
        Self { agent: ureq::AgentBuilder::new().build() }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(&str, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, String> {
        let mut req = self.agent.post(url).timeout(timeout).set("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.set(k, v);
        }
        match req.send_string(body) {
            Ok(resp) => {
                let status = resp.status();
                let body = resp.into_string().map_err(|e| e.to_string())?;
                Ok(HttpReply { status, body })
            }
            Err(ureq::Error::Status(status, resp)) => {
                Ok(HttpReply { status, body: resp.into_string().unwrap_or_default() })
            }
            Err(ureq::Error::Transport(t)) => Err(t.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: u32,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay_ms: 1000, factor: 2, max_delay_ms: 60_000 }
    }
}

impl RetryPolicy {
    /// Upper bound of the jitter window before retry number `retry` (1-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        let mut ms = self.base_delay_ms;
        for _ in 1..retry {
            ms = ms.saturating_mul(self.factor as u64);
        }
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub base_url: String,
    pub path: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".into(),
            path: "/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            max_concurrency: 8,
            retry: RetryPolicy::default(),
        }
    }
}

impl HttpConfig {
    pub fn url(&self) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), self.path.trim_start_matches('/'))
    }
}

/// Counting semaphore bounding in-flight requests.
struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self { permits: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut left = self.permits.lock().unwrap();
        while *left == 0 {
            left = self.freed.wait(left).unwrap();
        }
        *left -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Default)]
pub struct Telemetry {
    requests: AtomicU64,
    attempts: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
    in_flight: AtomicU64,
    max_in_flight: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct TelemetrySnapshot {
    pub requests: u64,
    pub attempts: u64,
    pub retries: u64,
    pub failures: u64,
    pub max_in_flight: u64,
}

impl Telemetry {
    pub fn snapshot(&self) -> TelemetrySnapshot {
        TelemetrySnapshot {
            requests: self.requests.load(Ordering::SeqCst),
            attempts: self.attempts.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
            failures: self.failures.load(Ordering::SeqCst),
            max_in_flight: self.max_in_flight.load(Ordering::SeqCst),
        }
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Live chat-completion client with retry and a concurrency cap.
pub struct HttpBackend<T: HttpTransport = UreqTransport> {
    config: HttpConfig,
    transport: T,
    api_key: String,
    limiter: Limiter,
    telemetry: Telemetry,
    jitter: Mutex<ChaCha20Rng>,
    sleep: Sleeper,
}

impl<T: HttpTransport> fmt::Debug for HttpBackend<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .field("api_key", &"<redacted>")
            .finish_non_exhaustive()
    }
}

impl HttpBackend<UreqTransport> {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: HttpConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::MissingApiKey(config.api_key_env.clone()))?;
        Ok(Self::with_transport(config, UreqTransport::new(), key))
    }
}

impl<T: HttpTransport> HttpBackend<T> {
    pub fn with_transport(config: HttpConfig, transport: T, api_key: String) -> Self {
        let limiter = Limiter::new(config.max_concurrency);
        Self {
            config,
            transport,
            api_key,
            limiter,
            telemetry: Telemetry::default(),
            jitter: Mutex::new(ChaCha20Rng::seed_from_u64(clock_seed())),
            sleep: Arc::new(std::thread::sleep),
        }
    }

    /// Replaces the sleep used between retries (tests record instead of waiting).
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn with_jitter_seed(self, seed: u64) -> Self {
        *self.jitter.lock().unwrap() = ChaCha20Rng::seed_from_u64(seed);
        self
    }

    pub fn telemetry(&self) -> TelemetrySnapshot {
        self.telemetry.snapshot()
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn body(req: &ChatRequest) -> String {
        let messages: Vec<Value> =
            req.messages().iter().map(|m| json!({"role": m.role.as_str(), "content": m.content})).collect();
        json!({
            "model": req.model(),
            "messages": messages,
            "temperature": req.temperature(),
            "max_tokens": req.max_output_tokens(),
        })
        .to_string()
    }

    fn attempt(&self, url: &str, body: &str) -> Result<ChatResponse, LlmError> {
        let _permit = self.limiter.acquire();
        let now = self.telemetry.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.telemetry.max_in_flight.fetch_max(now, Ordering::SeqCst);
        self.telemetry.attempts.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let headers = [("Authorization", format!("Bearer {}", self.api_key))];
        let reply = self.transport.post_json(url, &headers, body, Duration::from_secs(self.config.timeout_secs));
        self.telemetry.in_flight.fetch_sub(1, Ordering::SeqCst);
        let reply = reply.map_err(LlmError::Transport)?;
        if !(200..300).contains(&reply.status) {
            return Err(LlmError::Status { status: reply.status, body: excerpt(&reply.body) });
        }
        let mut resp = parse_completion(&reply.body)?;
        resp.latency_ms = started.elapsed().as_millis() as u64;
        Ok(resp)
    }

    fn backoff(&self, retry: u32) -> Duration {
        let ceiling = self.config.retry.ceiling(retry).as_millis() as u64;
        let ms = if ceiling == 0 { 0 } else { self.jitter.lock().unwrap().next_u64() % (ceiling + 1) };
        Duration::from_millis(ms)
    }
}

// jitter only needs to decorrelate clients, not be secret
fn clock_seed() -> u64 {
    let nanos =
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
    nanos ^ std::process::id() as u64
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 300;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}…", &body[..i]),
        None => body.to_string(),
    }
}

fn parse_completion(body: &str) -> Result<ChatResponse, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::Decode(e.to_string()))?;
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| LlmError::Decode("missing choices[0].message.content".into()))?;
    Ok(ChatResponse {
        text: text.to_string(),
        prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        latency_ms: 0,
    })
}

impl<T: HttpTransport> ChatBackend for HttpBackend<T> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.telemetry.requests.fetch_add(1, Ordering::SeqCst);
        let url = self.config.url();
        let body = Self::body(req);
        let max = self.config.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.attempt(&url, &body) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_retryable() && attempt < max => {
                    self.telemetry.retries.fetch_add(1, Ordering::SeqCst);
                    (self.sleep)(self.backoff(attempt));
                    attempt += 1;
                }
                Err(e) => {
                    self.telemetry.failures.fetch_add(1, Ordering::SeqCst);
                    if e.is_retryable() {
                        return Err(LlmError::RetryExhausted { attempts: attempt, last: e.to_string() });
                    }
                    return Err(e);
                }
            }
        }
    }

    fn fingerprint(&self) -> String {
        format!("http:{}", self.config.url())
    }
}
