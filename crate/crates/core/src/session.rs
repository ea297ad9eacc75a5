//! Shared plumbing for every LLM-driven stage: request construction, retries,
//! one re-ask on unparseable output, and the causal trace of every call.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::htmlio::HtmlError;
use crate::llm::{
    complete_with_retry, ChatMessage, CompletionRequest, CompletionResponse, LlmError, LlmProvider,
    RetryPolicy, Usage,
};
use crate::repository::RepositoryError;
use crate::templates;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("stage {stage}: {error}")]
    Provider { stage: String, error: LlmError },
    #[error("stage {stage}: unparseable response after re-ask: {message}")]
    Parse { stage: String, message: String },
    /// No example GUIs survived filtering; the caller should fall back to the
    /// plain zero-shot instruction.
    #[error("no example GUIs available; fall back to zero-shot instruction")]
    Fallback,
    #[error(transparent)]
    Screenshot(#[from] RepositoryError),
    #[error(transparent)]
    Html(#[from] HtmlError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl GenerationError {
    pub fn stage(&self) -> Option<&str> {
        match self {
            GenerationError::Provider { stage, .. } | GenerationError::Parse { stage, .. } => {
                Some(stage)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: String,
    pub fingerprint: String,
    /// Text parts of the request, newline joined.
    pub prompt_text: String,
    pub image_count: usize,
    /// Set on the automatic second request after an unparseable response.
    #[serde(default)]
    pub reask: bool,
    pub attempts: u32,
    pub response: CompletionResponse,
    pub timestamp: DateTime<Utc>,
}

/// Every LLM call of a run, in causal order, plus warnings raised on the way.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub records: Vec<TraceRecord>,
    pub totals: Usage,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl GenerationTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.totals += record.response.usage;
        self.records.push(record);
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = TraceRecord>) {
        for r in records {
            self.push(r);
        }
    }

    /// Appends another trace's records and warnings.
    pub fn append(&mut self, other: GenerationTrace) {
        self.extend(other.records);
        self.warnings.extend(other.warnings);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn call_count(&self) -> usize {
        self.records.len()
    }

    pub fn stages(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.stage.as_str()).collect()
    }
}

/// Model parameters applied to every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Per-stage output limits keyed by stage-label prefix; the longest
    /// matching prefix wins.
    #[serde(default)]
    pub stage_max_tokens: BTreeMap<String, u32>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o".into(),
            temperature: 0.5,
            max_output_tokens: 4096,
            stage_max_tokens: BTreeMap::new(),
            retry: RetryPolicy::default(),
        }
    }
}

impl Settings {
    fn max_tokens_for(&self, stage: &str) -> u32 {
        self.stage_max_tokens
            .iter()
            .filter(|(prefix, _)| stage.starts_with(prefix.as_str()))
            .max_by_key(|(prefix, _)| prefix.len())
            .map_or(self.max_output_tokens, |(_, &v)| v)
    }
}

/// A provider bound to run settings.
#[derive(Clone, Copy)]
pub struct Session<'a> {
    pub provider: &'a dyn LlmProvider,
    pub settings: &'a Settings,
}

/// A parsed value together with the calls that produced it.
#[derive(Debug)]
pub struct Staged<T> {
    pub value: T,
    pub records: Vec<TraceRecord>,
    /// Raw text of the response the value was parsed from.
    pub raw: String,
}

impl<'a> Session<'a> {
    pub fn new(provider: &'a dyn LlmProvider, settings: &'a Settings) -> Self {
        Self { provider, settings }
    }

    /// One request (with provider-level retries) and its trace record.
    pub fn call(
        &self,
        stage: &str,
        messages: Vec<ChatMessage>,
        sample_count: u32,
        reask: bool,
    ) -> Result<TraceRecord, GenerationError> {
        let req = CompletionRequest {
            model_id: self.settings.model_id.clone(),
            messages,
            temperature: self.settings.temperature,
            max_output_tokens: self.settings.max_tokens_for(stage),
            sample_count,
            stage: Some(stage.to_string()),
        };
        let done = complete_with_retry(self.provider, &req, &self.settings.retry).map_err(|e| {
            GenerationError::Provider {
                stage: stage.to_string(),
                error: e.error,
            }
        })?;
        Ok(TraceRecord {
            stage: stage.to_string(),
            fingerprint: req.fingerprint(),
            prompt_text: req.prompt_text(),
            image_count: req.image_count(),
            reask,
            attempts: done.attempts,
            response: done.response,
            timestamp: Utc::now(),
        })
    }

    /// Single-sample request whose first response is parsed by `parse`. An
    /// unparseable response triggers exactly one follow-up request carrying
    /// the previous answer and a format reminder.
    pub fn ask<T>(
        &self,
        stage: &str,
        messages: Vec<ChatMessage>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Staged<T>, GenerationError> {
        let first = self.call(stage, messages.clone(), 1, false)?;
        let raw = first.response.first().to_string();
        let problem = match parse(&raw) {
            Ok(value) => {
                return Ok(Staged {
                    value,
                    records: vec![first],
                    raw,
                })
            }
            Err(p) => p,
        };
        log::warn!("stage {stage}: {problem}; asking again");
        let mut follow = messages;
        follow.push(ChatMessage::assistant(raw));
        follow.push(ChatMessage::user(templates::reask(&problem)));
        let second = self.call(stage, follow, 1, true)?;
        let raw = second.response.first().to_string();
        match parse(&raw) {
            Ok(value) => Ok(Staged {
                value,
                records: vec![first, second],
                raw,
            }),
            Err(message) => Err(GenerationError::Parse {
                stage: stage.to_string(),
                message,
            }),
        }
    }

    /// Like [`Session::ask`] but a second parse failure yields `None` with the
    /// records kept, for stages that degrade instead of failing.
    pub fn ask_lenient<T>(
        &self,
        stage: &str,
        messages: Vec<ChatMessage>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<(Option<T>, Vec<TraceRecord>, String), GenerationError> {
        let first = self.call(stage, messages.clone(), 1, false)?;
        let raw = first.response.first().to_string();
        let problem = match parse(&raw) {
            Ok(value) => return Ok((Some(value), vec![first], raw)),
            Err(p) => p,
        };
        let mut follow = messages;
        follow.push(ChatMessage::assistant(raw));
        follow.push(ChatMessage::user(templates::reask(&problem)));
        let second = self.call(stage, follow, 1, true)?;
        let raw = second.response.first().to_string();
        let value = parse(&raw).ok();
        Ok((value, vec![first, second], raw))
    }
}
