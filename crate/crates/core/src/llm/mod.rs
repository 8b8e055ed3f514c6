//! Chat-completion backends: a live HTTP client, a deterministic mock, and a
//! record/replay cache that wraps either.

mod cache;
mod http;
mod mock;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use cache::{CacheMode, CacheStats, CachedBackend, ResponseCache};
pub use http::{
    HttpBackend, HttpConfig, HttpReply, HttpTransport, RetryPolicy, Telemetry, TelemetrySnapshot, UreqTransport,
};
pub use mock::{MockBackend, SyntheticResponder};

use crate::digest::sha256_parts;

pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("API key variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("retry budget exhausted after {attempts} attempts (retryable-exhausted): {last}")]
    RetryExhausted { attempts: u32, last: String },
    #[error("cannot decode backend reply: {0}")]
    Decode(String),
    #[error("no cached response for request {digest} (strict replay)")]
    CacheMiss { digest: String },
    #[error("cache entry {digest} holds a different request; refusing to use it")]
    Integrity { digest: String },
    #[error("cache I/O on {path}: {message}")]
    CacheIo { path: String, message: String },
    #[error("mock has no fixture for request {digest}")]
    NoFixture { digest: String },
}

impl LlmError {
    /// Worth another attempt (rate limit, server error, network).
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            LlmError::Transport(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

/// Model and sampling settings shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

/// A validated chat-completion request. The digest is derived, never stored
/// independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChatRequest", into = "RawChatRequest")]
pub struct ChatRequest {
    model: String,
    messages: Vec<ChatMessage>,
    temperature: f64,
    max_output_tokens: u32,
}

#[derive(Serialize, Deserialize)]
struct RawChatRequest {
    model: String,
    messages: Vec<ChatMessage>,
    temperature: f64,
    max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    request_digest: Option<String>,
}

impl TryFrom<RawChatRequest> for ChatRequest {
    type Error = LlmError;

    fn try_from(raw: RawChatRequest) -> Result<Self, LlmError> {
        let req = ChatRequest::new(
            &ChatParams { model: raw.model, temperature: raw.temperature, max_output_tokens: raw.max_output_tokens },
            raw.messages,
        )?;
        if let Some(d) = raw.request_digest {
            if d != req.digest() {
                return Err(LlmError::InvalidRequest(format!("stored digest {d} does not match content")));
            }
        }
        Ok(req)
    }
}

impl From<ChatRequest> for RawChatRequest {
    fn from(req: ChatRequest) -> Self {
        let request_digest = Some(req.digest());
        RawChatRequest {
            model: req.model,
            messages: req.messages,
            temperature: req.temperature,
            max_output_tokens: req.max_output_tokens,
            request_digest,
        }
    }
}

impl ChatRequest {
    pub fn new(params: &ChatParams, messages: Vec<ChatMessage>) -> Result<Self, LlmError> {
        if params.model.trim().is_empty() {
            return Err(LlmError::InvalidRequest("model name is empty".into()));
        }
        if messages.is_empty() {
            return Err(LlmError::InvalidRequest("messages are empty".into()));
        }
        if !(0.0..=2.0).contains(&params.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", params.temperature)));
        }
        if params.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(Self {
            model: params.model.clone(),
            messages,
            // collapse -0.0 so it digests like 0.0
            temperature: params.temperature + 0.0,
            max_output_tokens: params.max_output_tokens,
        })
    }

    /// A single user message.
    pub fn user(params: &ChatParams, prompt: impl Into<String>) -> Result<Self, LlmError> {
        Self::new(params, vec![ChatMessage::user(prompt)])
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn max_output_tokens(&self) -> u32 {
        self.max_output_tokens
    }

    /// Stable content hash of every field.
    pub fn digest(&self) -> String {
        let temp = format!("{:016x}", self.temperature.to_bits());
        let max = self.max_output_tokens.to_string();
        let mut parts: Vec<&[u8]> = vec![b"chat-request-v1", self.model.as_bytes(), temp.as_bytes(), max.as_bytes()];
        for m in &self.messages {
            parts.push(m.role.as_str().as_bytes());
            parts.push(m.content.as_bytes());
        }
        sha256_parts(parts)
    }

    /// Concatenated message contents, for responders that inspect the prompt.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// Anything that can answer a chat request. Implementations are shared
/// across worker threads.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;

    /// Identifies the backend configuration in run manifests.
    fn fingerprint(&self) -> String;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }

    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

impl fmt::Display for ChatRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} messages, digest {})", self.model, self.messages.len(), &self.digest()[..12])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(t: f64) -> ChatParams {
        ChatParams { temperature: t, ..ChatParams::default() }
    }

    #[test]
    fn defaults() {
        let p = ChatParams::default();
        assert_eq!((p.model.as_str(), p.temperature, p.max_output_tokens), ("gpt-4o", 0.0, 1024));
    }

    #[test]
    fn rejects_invalid_requests() {
        assert!(ChatRequest::new(&params(0.0), vec![]).is_err());
        assert!(ChatRequest::user(&params(2.5), "x").is_err());
        assert!(ChatRequest::user(&params(f64::NAN), "x").is_err());
        assert!(ChatRequest::user(&ChatParams { max_output_tokens: 0, ..params(0.0) }, "x").is_err());
        assert!(ChatRequest::user(&params(2.0), "x").is_ok());
    }

    #[test]
    fn digest_changes_with_temperature_and_role() {
        let a = ChatRequest::user(&params(0.0), "hi").unwrap();
        let b = ChatRequest::user(&params(0.1), "hi").unwrap();
        let c = ChatRequest::new(&params(0.0), vec![ChatMessage::system("hi")]).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest(), ChatRequest::user(&params(-0.0), "hi").unwrap().digest());
    }

    #[test]
    fn tampered_digest_is_rejected_on_read() {
        let req = ChatRequest::user(&params(0.0), "hi").unwrap();
        let mut v = serde_json::to_value(&req).unwrap();
        v["request_digest"] = serde_json::json!("00");
        assert!(serde_json::from_value::<ChatRequest>(v).is_err());
    }

    #[test]
    fn retryable_statuses() {
        let s = |status| LlmError::Status { status, body: String::new() };
        assert!(s(429).is_retryable());
        assert!(s(503).is_retryable());
        assert!(!s(400).is_retryable());
        assert!(!s(401).is_retryable());
    }

    proptest! {
        #[test]
        fn digest_survives_serialization(
            model in "[a-z0-9.-]{1,12}",
            t in 0.0f64..=2.0,
            max in 1u32..10_000,
            contents in proptest::collection::vec(("(?s).{0,60}", 0usize..3), 1..4),
        ) {
            let roles = [Role::System, Role::User, Role::Assistant];
            let messages = contents
                .into_iter()
                .map(|(content, r)| ChatMessage { role: roles[r], content })
                .collect();
            let req = ChatRequest::new(&ChatParams { model, temperature: t, max_output_tokens: max }, messages).unwrap();
            let json = serde_json::to_string(&req).unwrap();
            let back: ChatRequest = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back.digest(), req.digest());
            prop_assert_eq!(back, req);
        }
    }
}
