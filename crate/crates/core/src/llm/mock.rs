//! Deterministic test backends.
//!
//! [`MockProvider`] is driven by a script file:
//!
//! ```json
//! {
//!   "version": 1,
//!   "responses": { "<fingerprint>": ["first sample", "second sample"] },
//!   "rules": [
//!     { "stage": "scgg.critique", "contains": ["login"], "responses": ["Add a footer."] },
//!     { "stage": "pdgg.*", "responses": [{ "error": "retryable", "message": "503" }] }
//!   ],
//!   "fallback": ["<html><body></body></html>"]
//! }
//! ```
//!
//! Lookup order: exact fingerprint, then the first matching rule, then the
//! fallback list. A request for `n` samples takes the first `n` replies,
//! cycling when the list is shorter.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, CompletionRequest, CompletionResponse, LlmError, LlmProvider, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockErrorKind {
    Retryable,
    Fatal,
    ContextOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Error {
        error: MockErrorKind,
        #[serde(default)]
        message: String,
    },
}

impl From<&str> for MockReply {
    fn from(s: &str) -> Self {
        MockReply::Text(s.to_string())
    }
}

impl From<String> for MockReply {
    fn from(s: String) -> Self {
        MockReply::Text(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    /// Exact stage label, or a prefix followed by `*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    /// Every entry must occur in the concatenated prompt text.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    pub responses: Vec<MockReply>,
}

impl MockRule {
    pub fn stage(stage: &str, responses: Vec<MockReply>) -> Self {
        Self {
            stage: Some(stage.to_string()),
            contains: Vec::new(),
            responses,
        }
    }

    fn matches(&self, req: &CompletionRequest, text: &str) -> bool {
        let stage_ok = match (&self.stage, &req.stage) {
            (None, _) => true,
            (Some(want), Some(have)) => match want.strip_suffix('*') {
                Some(prefix) => have.starts_with(prefix),
                None => want == have,
            },
            (Some(_), None) => false,
        };
        stage_ok && self.contains.iter().all(|c| text.contains(c.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default = "one")]
    pub version: u32,
    #[serde(default)]
    pub responses: BTreeMap<String, Vec<MockReply>>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub fallback: Vec<MockReply>,
}

fn one() -> u32 {
    1
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            version: 1,
            responses: BTreeMap::new(),
            rules: Vec::new(),
            fallback: Vec::new(),
        }
    }
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Fatal(format!("cannot read mock script {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| LlmError::Fatal(format!("malformed mock script {}: {e}", path.display())))
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_stage(self, stage: &str, responses: &[&str]) -> Self {
        self.with_rule(MockRule::stage(
            stage,
            responses.iter().map(|&r| r.into()).collect(),
        ))
    }

    pub fn with_fallback(mut self, responses: &[&str]) -> Self {
        self.fallback = responses.iter().map(|&r| r.into()).collect();
        self
    }

    fn lookup(&self, req: &CompletionRequest) -> Option<&[MockReply]> {
        if let Some(r) = self.responses.get(&req.fingerprint()) {
            return Some(r);
        }
        let text = req.prompt_text();
        if let Some(rule) = self.rules.iter().find(|r| r.matches(req, &text)) {
            return Some(&rule.responses);
        }
        (!self.fallback.is_empty()).then_some(self.fallback.as_slice())
    }
}

/// Pure scripted backend: the response depends only on the request content and
/// the script.
#[derive(Debug, Clone)]
pub struct MockProvider {
    script: MockScript,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(MockScript::load(path)?))
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl LlmProvider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let replies = self
            .script
            .lookup(req)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| {
                LlmError::Fatal(format!(
                    "mock script has no response for fingerprint {} (stage {})",
                    req.fingerprint(),
                    req.stage.as_deref().unwrap_or("-")
                ))
            })?;
        let mut samples = Vec::with_capacity(req.sample_count as usize);
        for i in 0..req.sample_count as usize {
            match &replies[i % replies.len()] {
                MockReply::Text(t) => samples.push(t.clone()),
                MockReply::Error { error, message } => {
                    return Err(match error {
                        MockErrorKind::Retryable => LlmError::Retryable(message.clone()),
                        MockErrorKind::Fatal => LlmError::Fatal(message.clone()),
                        MockErrorKind::ContextOverflow => LlmError::ContextOverflow(message.clone()),
                    })
                }
            }
        }
        let usage = Usage {
            prompt_tokens: estimate_tokens(&req.prompt_text()),
            output_tokens: samples.iter().map(|s| estimate_tokens(s)).sum(),
        };
        Ok(CompletionResponse {
            samples,
            usage,
            latency: Duration::ZERO,
        })
    }
}

/// Stateful backend that replays a fixed queue of outcomes in call order and
/// records every request it sees.
#[derive(Debug, Default)]
pub struct SequenceProvider {
    queue: Mutex<VecDeque<Result<Vec<String>, LlmError>>>,
    seen: Mutex<Vec<CompletionRequest>>,
}

impl SequenceProvider {
    pub fn new(outcomes: Vec<Result<Vec<String>, LlmError>>) -> Self {
        Self {
            queue: Mutex::new(outcomes.into()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Convenience: every outcome is a single successful text.
    pub fn texts(texts: &[&str]) -> Self {
        Self::new(texts.iter().map(|t| Ok(vec![t.to_string()])).collect())
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl LlmProvider for SequenceProvider {
    fn id(&self) -> &str {
        "sequence"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        self.seen.lock().unwrap().push(req.clone());
        let next = self
            .queue
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(LlmError::Fatal("sequence exhausted".into())))?;
        if next.is_empty() {
            return Err(LlmError::Fatal("empty scripted sample list".into()));
        }
        let samples = (0..req.sample_count as usize)
            .map(|i| next[i % next.len()].clone())
            .collect();
        Ok(CompletionResponse {
            samples,
            usage: Usage::default(),
            latency: Duration::ZERO,
        })
    }
}
