//! Chat-completion backends and the client wrapper every agent calls through.
//!
//! [`LmmClient`] sits in front of a [`ChatBackend`] and adds three things:
//! a response cache keyed by [`cache_key`], an admission limiter that caps
//! concurrent backend requests, and a [`CallRecord`] for every logical call.

mod cache;
mod http;
mod mock;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use cache::{cache_key, parse_cache_log, ResponseCache};
pub use http::HttpBackend;
pub use mock::{parse_scenario, MockBackend, MockRule, Matcher};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {0}")]
    BadStatus(u16),
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("malformed response body: {0}")]
    BadResponse(String),
    #[error("cannot read image {0}")]
    UnreadableImage(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("scenario has no default rule")]
    NoDefaultRule,
    #[error("scenario line {line}: {detail}")]
    Scenario { line: usize, detail: String },
    #[error("response cache: {0}")]
    Cache(String),
}

impl BackendError {
    /// Errors that say nothing about the request itself and are worth
    /// retrying at the transport level.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Timeout | BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
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
    pub text: String,
    /// Image references (paths or URIs), sent as attachments.
    #[serde(default)]
    pub images: Vec<String>,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, text: text.into(), images: Vec::new() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, text: text.into(), images: Vec::new() }
    }

    pub fn with_image(mut self, image_ref: impl Into<String>) -> Self {
        self.images.push(image_ref.into());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty() && self.images.is_empty()
    }
}

/// Concatenated message texts; what the mock backend matches against.
pub fn rendered_prompt(messages: &[ChatMessage]) -> String {
    messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub max_inflight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: "mock".into(),
            temperature: 0.0,
            timeout: Duration::from_secs(120),
            max_inflight: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    DerivingFwd,
    DerivingBack,
    DebaterFwd,
    DebaterBack,
    Judge,
    Baseline,
}

impl AgentRole {
    pub const ALL: [AgentRole; 6] = [
        AgentRole::DerivingFwd,
        AgentRole::DerivingBack,
        AgentRole::DebaterFwd,
        AgentRole::DebaterBack,
        AgentRole::Judge,
        AgentRole::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::DerivingFwd => "deriving_fwd",
            AgentRole::DerivingBack => "deriving_back",
            AgentRole::DebaterFwd => "debater_fwd",
            AgentRole::DebaterBack => "debater_back",
            AgentRole::Judge => "judge",
            AgentRole::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for AgentRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    /// 1-based position within the sample; assigned when the transcript is
    /// assembled.
    pub sequence_no: u32,
    pub agent_role: AgentRole,
    pub prompt_hash: String,
    pub response_text: String,
    /// Set on the second attempt after an unparseable reply.
    pub format_retry: bool,
    /// Volatile: kept out of the transcript so reruns stay byte-identical.
    #[serde(default, skip_serializing)]
    pub cached: bool,
    #[serde(default, skip_serializing)]
    pub latency_ms: u64,
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// Identity used to namespace cache entries.
    fn model_name(&self) -> &str;

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ClientStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
}

pub struct LmmClient {
    backend: Arc<dyn ChatBackend>,
    cache: Option<ResponseCache>,
    limiter: Semaphore,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl LmmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, max_inflight: usize) -> Self {
        LmmClient {
            backend,
            cache: None,
            limiter: Semaphore::new(max_inflight.max(1)),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn model_name(&self) -> &str {
        self.backend.model_name()
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    /// One logical call. The returned record has `sequence_no` 0.
    pub async fn call(
        &self,
        role: AgentRole,
        messages: &[ChatMessage],
    ) -> Result<CallRecord, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        if messages.iter().any(ChatMessage::is_empty) {
            return Err(BackendError::InvalidRequest("message with neither text nor images".into()));
        }
        let key = cache_key(self.backend.model_name(), messages)?;
        let record = |response_text: String, cached: bool, latency_ms: u64| CallRecord {
            sequence_no: 0,
            agent_role: role,
            prompt_hash: key.clone(),
            response_text,
            format_retry: false,
            cached,
            latency_ms,
        };
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(record(hit, true, 0));
        }

        let started = Instant::now();
        let response = {
            let _permit = self.limiter.acquire().await.expect("limiter never closes");
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            self.backend.complete(messages).await?
        };
        if response.trim().is_empty() {
            return Err(BackendError::EmptyResponse);
        }
        if let Some(cache) = &self.cache {
            cache.insert(&key, &response)?;
        }
        Ok(record(response, false, started.elapsed().as_millis() as u64))
    }
}
