//! Chat-completion provider abstraction: request/response model, retries, an
//! in-flight limiter, a scripted mock and an HTTP backend speaking the common
//! chat-completions wire format.

pub(crate) mod http;
mod limiter;
mod mock;
mod retry;

pub use http::{ChatEndpoint, HttpConfig};
pub use limiter::{Limited, DEFAULT_IN_FLIGHT};
pub use mock::{MockProvider, MockReply, MockRule, MockScript, SequenceProvider};
pub use retry::{complete_with_retry, Retried, RetryError, RetryPolicy};

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum LlmError {
    /// Transport failures, rate limits, server errors.
    #[error("retryable provider error: {0}")]
    Retryable(String),
    /// Authentication, invalid requests, missing configuration.
    #[error("fatal provider error: {0}")]
    Fatal(String),
    #[error("context overflow: {0}")]
    ContextOverflow(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Retryable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Encoded image bytes; serialized as base64.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageData {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

impl ImageData {
    pub fn new(media_type: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            media_type: media_type.into(),
            bytes,
        }
    }

    pub fn to_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(&self.bytes)
    }

    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.media_type, self.to_base64())
    }
}

impl std::fmt::Debug for ImageData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageData")
            .field("media_type", &self.media_type)
            .field("len", &self.bytes.len())
            .finish()
    }
}

impl Serialize for ImageData {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ImageData", 2)?;
        st.serialize_field("media_type", &self.media_type)?;
        st.serialize_field("base64", &self.to_base64())?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for ImageData {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            media_type: String,
            base64: String,
        }
        let raw = Raw::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(raw.base64)
            .map_err(serde::de::Error::custom)?;
        Ok(ImageData::new(raw.media_type, bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    Image(ImageData),
}

impl Part {
    pub fn text(t: impl Into<String>) -> Self {
        Part::Text { text: t.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            parts: vec![Part::text(text)],
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            parts: vec![Part::text(text)],
        }
    }

    pub fn user_parts(parts: Vec<Part>) -> Self {
        Self {
            role: Role::User,
            parts,
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            parts: vec![Part::text(text)],
        }
    }

    pub fn text_parts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            Part::Text { text } => Some(text.as_str()),
            Part::Image(_) => None,
        })
    }

    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, Part::Image(_)))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub sample_count: u32,
    /// Pipeline stage that issued the request. Never sent to a backend and
    /// not part of the fingerprint; the mock may match on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

/// Upper bound accepted by the common chat-completions backends.
pub const MAX_TEMPERATURE: f64 = 2.0;

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: 0.5,
            max_output_tokens: 4096,
            sample_count: 1,
            stage: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let invalid = |m: String| Err(LlmError::Fatal(format!("invalid request: {m}")));
        if self.messages.is_empty() {
            return invalid("no messages".into());
        }
        if !(0.0..=MAX_TEMPERATURE).contains(&self.temperature) {
            return invalid(format!("temperature {} out of range", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive".into());
        }
        if self.sample_count == 0 {
            return invalid("sample_count must be positive".into());
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.parts.is_empty() {
                return invalid(format!("message {i} has no parts"));
            }
            if m.role != Role::User && m.image_count() > 0 {
                return invalid(format!("message {i}: images are only allowed in user messages"));
            }
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.messages)
    }

    /// Concatenated text parts, newline separated.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .flat_map(|m| m.text_parts())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.messages.iter().map(ChatMessage::image_count).sum()
    }
}

/// Stable request fingerprint: lowercase hex SHA-256 over every text part in
/// message order, each part's UTF-8 bytes followed by one 0x1E byte. Roles and
/// images do not contribute.
pub fn fingerprint(messages: &[ChatMessage]) -> String {
    let mut h = Sha256::new();
    for text in messages.iter().flat_map(|m| m.text_parts()) {
        h.update(text.as_bytes());
        h.update([0x1E]);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    /// Raw model texts, one per requested sample.
    pub samples: Vec<String>,
    pub usage: Usage,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
}

impl CompletionResponse {
    pub fn first(&self) -> &str {
        self.samples.first().map(String::as_str).unwrap_or("")
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// A chat-completion backend. Implementations must be thread-safe.
pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;

    /// Performs one completion. Callers go through [`complete`], which
    /// validates the request first.
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

impl<P: LlmProvider + ?Sized> LlmProvider for &P {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<P: LlmProvider + ?Sized> LlmProvider for std::sync::Arc<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<P: LlmProvider + ?Sized> LlmProvider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(req)
    }
}

/// Validates `req` and runs it. The response always has exactly
/// `sample_count` samples.
pub fn complete(
    provider: &dyn LlmProvider,
    req: &CompletionRequest,
) -> Result<CompletionResponse, LlmError> {
    req.validate()?;
    let resp = provider.complete(req)?;
    if resp.samples.len() != req.sample_count as usize {
        return Err(LlmError::Fatal(format!(
            "provider {} returned {} samples, expected {}",
            provider.id(),
            resp.samples.len(),
            req.sample_count
        )));
    }
    Ok(resp)
}

/// Rough whitespace token estimate used when a backend reports no usage.
pub(crate) fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
