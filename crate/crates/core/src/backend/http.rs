//! OpenAI-compatible chat-completion client.
//!
//! Images are read from their references at call time and sent as base64
//! data URLs. Transport failures (connect errors, timeouts) are retried with
//! exponential backoff; any HTTP response, good or bad, is final.

use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde_json::{json, Value};

use super::{BackendConfig, BackendError, ChatBackend, ChatMessage};

pub const API_KEY_ENV: &str = "MIND_API_KEY";
const ATTEMPTS: u32 = 3;

pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::InvalidRequest("http backend needs an endpoint".into()))?;
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            client,
            endpoint,
            model: config.model_name.clone(),
            temperature: config.temperature,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            backoff: Duration::from_millis(250),
        })
    }

    /// Base delay before the first retry; doubles on each further attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Result<Value, BackendError> {
        let messages = messages
            .iter()
            .map(|m| {
                let mut parts = Vec::new();
                if !m.text.is_empty() {
                    parts.push(json!({"type": "text", "text": m.text}));
                }
                for image in &m.images {
                    parts.push(json!({"type": "image_url", "image_url": {"url": data_url(image)?}}));
                }
                Ok(json!({"role": m.role.as_str(), "content": parts}))
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        Ok(json!({
            "model": self.model,
            "temperature": self.temperature,
            "stream": false,
            "messages": messages,
        }))
    }

    async fn attempt(&self, body: &Value) -> Result<String, BackendError> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::BadStatus(status.as_u16()));
        }
        let bytes = resp.bytes().await.map_err(transport)?;
        let payload: Value =
            serde_json::from_slice(&bytes).map_err(|e| BackendError::BadResponse(e.to_string()))?;
        extract_text(&payload)
    }
}

fn transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}

fn mime_for(image_ref: &str) -> &'static str {
    let lower = image_ref.to_ascii_lowercase();
    match lower.rsplit('.').next() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

fn data_url(image_ref: &str) -> Result<String, BackendError> {
    if image_ref.starts_with("http://") || image_ref.starts_with("https://") || image_ref.starts_with("data:") {
        return Ok(image_ref.to_owned());
    }
    let bytes = std::fs::read(image_ref).map_err(|_| BackendError::UnreadableImage(image_ref.into()))?;
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{};base64,{encoded}", mime_for(image_ref)))
}

/// Assistant text from `choices[0].message.content`, which may be a plain
/// string or a list of typed parts.
pub(crate) fn extract_text(payload: &Value) -> Result<String, BackendError> {
    let content = payload
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::BadResponse("no choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Value::Null => String::new(),
        other => return Err(BackendError::BadResponse(format!("unexpected content {other}"))),
    };
    if text.trim().is_empty() {
        return Err(BackendError::EmptyResponse);
    }
    Ok(text)
}

#[async_trait]
impl ChatBackend for HttpBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let body = self.request_body(messages)?;
        let mut delay = self.backoff;
        let mut attempt = 1;
        loop {
            match self.attempt(&body).await {
                Err(e) if e.is_transient() && attempt < ATTEMPTS => {
                    log::warn!("attempt {attempt}/{ATTEMPTS} to {} failed: {e}", self.endpoint);
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
