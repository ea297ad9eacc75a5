use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    estimate_tokens, CompletionRequest, CompletionResponse, LlmError, LlmProvider, Part, Role, Usage,
};

/// Endpoint + credential location for any HTTP backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl HttpConfig {
    /// Reads the credential. Fails before any network traffic when the
    /// variable is unset or empty.
    pub fn api_key(&self) -> Result<String, LlmError> {
        match std::env::var(&self.api_key_env) {
            Ok(k) if !k.trim().is_empty() => Ok(k),
            _ => Err(LlmError::Fatal(format!(
                "credential environment variable {} is not set",
                self.api_key_env
            ))),
        }
    }
}

pub(crate) struct HttpClient {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpClient {
    pub(crate) fn new(cfg: &HttpConfig) -> Result<Self, LlmError> {
        let api_key = cfg.api_key()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Fatal(format!("http client: {e}")))?;
        Ok(Self {
            endpoint: cfg.endpoint.clone(),
            api_key,
            client,
        })
    }

    pub(crate) fn post(&self, body: &Value) -> Result<Value, LlmError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| LlmError::Retryable(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .map_err(|e| LlmError::Retryable(format!("reading body: {e}")))?;
        if let Some(err) = classify_status(status, &text) {
            return Err(err);
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Retryable(format!("malformed body: {e}")))
    }
}

pub(crate) fn classify_status(status: u16, body: &str) -> Option<LlmError> {
    let snippet: String = body.chars().take(300).collect();
    let lower = body.to_ascii_lowercase();
    match status {
        200..=299 => None,
        401 | 403 => Some(LlmError::Fatal(format!("authentication failed ({status})"))),
        408 | 409 | 429 | 500..=599 => Some(LlmError::Retryable(format!("HTTP {status}: {snippet}"))),
        400 | 413
            if lower.contains("context_length")
                || lower.contains("maximum context")
                || lower.contains("too many tokens") =>
        {
            Some(LlmError::ContextOverflow(snippet))
        }
        _ => Some(LlmError::Fatal(format!("HTTP {status}: {snippet}"))),
    }
}

/// Live chat-completions backend.
pub struct ChatEndpoint {
    id: String,
    http: HttpClient,
    /// When false, multi-sample requests are issued as repeated `n = 1` calls.
    supports_n: bool,
}

impl ChatEndpoint {
    pub fn new(cfg: &HttpConfig, supports_n: bool) -> Result<Self, LlmError> {
        Ok(Self {
            id: format!("chat:{}", cfg.endpoint),
            http: HttpClient::new(cfg)?,
            supports_n,
        })
    }
}

pub(crate) fn chat_body(req: &CompletionRequest, n: u32) -> Value {
    let messages: Vec<Value> = req
        .messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let content: Vec<Value> = m
                .parts
                .iter()
                .map(|p| match p {
                    Part::Text { text } => json!({"type": "text", "text": text}),
                    Part::Image(img) => json!({
                        "type": "image_url",
                        "image_url": {"url": img.data_url()}
                    }),
                })
                .collect();
            json!({"role": role, "content": content})
        })
        .collect();
    json!({
        "model": req.model_id,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
        "n": n,
    })
}

pub(crate) fn parse_chat(body: &Value) -> Result<(Vec<String>, Option<Usage>), LlmError> {
    let choices = body
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| LlmError::Retryable("response has no choices".into()))?;
    let mut samples = Vec::with_capacity(choices.len());
    for c in choices {
        let content = &c["message"]["content"];
        let text = match content {
            Value::String(s) => s.clone(),
            Value::Array(parts) => parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
            _ => return Err(LlmError::Retryable("choice without text content".into())),
        };
        samples.push(text);
    }
    let usage = body.get("usage").map(|u| Usage {
        prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
        output_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
    });
    Ok((samples, usage))
}

impl LlmProvider for ChatEndpoint {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let started = Instant::now();
        let want = req.sample_count as usize;
        let mut samples = Vec::with_capacity(want);
        let mut usage = Usage::default();
        let mut reported = false;
        while samples.len() < want {
            let n = if self.supports_n { (want - samples.len()) as u32 } else { 1 };
            let body = self.http.post(&chat_body(req, n))?;
            let (got, u) = parse_chat(&body)?;
            if got.is_empty() {
                return Err(LlmError::Retryable("backend returned zero choices".into()));
            }
            if let Some(u) = u {
                usage += u;
                reported = true;
            }
            samples.extend(got);
        }
        samples.truncate(want);
        if !reported {
            usage = Usage {
                prompt_tokens: estimate_tokens(&req.prompt_text()),
                output_tokens: samples.iter().map(|s| estimate_tokens(s)).sum(),
            };
        }
        Ok(CompletionResponse {
            samples,
            usage,
            latency: started.elapsed(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatMessage, ImageData};

    #[test]
    fn body_follows_chat_wire_format() {
        let mut req = CompletionRequest::new(
            "gpt-test",
            vec![
                ChatMessage::system("be brief"),
                ChatMessage::user_parts(vec![
                    Part::text("look"),
                    Part::Image(ImageData::new("image/png", vec![1, 2])),
                ]),
            ],
        );
        req.sample_count = 3;
        let b = chat_body(&req, 3);
        assert_eq!(b["model"], "gpt-test");
        assert_eq!(b["n"], 3);
        assert_eq!(b["temperature"], 0.5);
        assert_eq!(b["messages"][0]["role"], "system");
        assert_eq!(b["messages"][1]["content"][1]["type"], "image_url");
        assert_eq!(
            b["messages"][1]["content"][1]["image_url"]["url"],
            "data:image/png;base64,AQI="
        );
        assert!(b.get("stage").is_none());
    }

    #[test]
    fn parses_choices_and_usage() {
        let body = json!({
            "choices": [
                {"message": {"role": "assistant", "content": "a"}},
                {"message": {"role": "assistant", "content": [{"type": "text", "text": "b"}]}}
            ],
            "usage": {"prompt_tokens": 10, "completion_tokens": 2}
        });
        let (s, u) = parse_chat(&body).unwrap();
        assert_eq!(s, vec!["a", "b"]);
        assert_eq!(u.unwrap().prompt_tokens, 10);
    }

    #[test]
    fn status_classes() {
        assert!(classify_status(200, "").is_none());
        assert!(matches!(classify_status(401, ""), Some(LlmError::Fatal(_))));
        assert!(matches!(classify_status(429, ""), Some(LlmError::Retryable(_))));
        assert!(matches!(classify_status(503, ""), Some(LlmError::Retryable(_))));
        assert!(matches!(
            classify_status(400, r#"{"error":{"code":"context_length_exceeded"}}"#),
            Some(LlmError::ContextOverflow(_))
        ));
        assert!(matches!(classify_status(404, ""), Some(LlmError::Fatal(_))));
    }

    #[test]
    fn missing_credential_is_fatal_before_network() {
        let cfg = HttpConfig {
            endpoint: "http://127.0.0.1:9/never".into(),
            api_key_env: "PROTOGEN_TEST_SURELY_UNSET_KEY".into(),
            timeout_secs: 1,
        };
        assert!(matches!(ChatEndpoint::new(&cfg, true), Err(LlmError::Fatal(_))));
    }
}
