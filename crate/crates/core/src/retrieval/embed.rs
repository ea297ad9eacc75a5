use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::llm::http::HttpClient;
use crate::llm::{HttpConfig, LlmError};

/// A sentence-embedding backend returning one raw vector per text.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        (**self).embed(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        (**self).embed(texts)
    }
}

/// Deterministic offline embedder: a signed hashed bag of lowercase word
/// tokens. Texts listed in `overrides` map to fixed vectors instead.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    id: String,
    dim: usize,
    overrides: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct OverrideFile {
    dim: usize,
    #[serde(default)]
    vectors: HashMap<String, Vec<f64>>,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        let dim = dim.max(1);
        Self {
            id: format!("mock-embed-{dim}"),
            dim,
            overrides: HashMap::new(),
        }
    }

    pub fn with_vector(mut self, text: &str, vector: Vec<f64>) -> Self {
        self.overrides.insert(text.to_string(), vector);
        self
    }

    /// Loads `{"dim": N, "vectors": {"text": [..]}}`.
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Fatal(format!("{}: {e}", path.display())))?;
        let f: OverrideFile = serde_json::from_str(&raw)
            .map_err(|e| LlmError::Fatal(format!("{}: {e}", path.display())))?;
        let mut m = Self::new(f.dim);
        m.overrides = f.vectors;
        Ok(m)
    }

    fn hashed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        let bucket = |token: &str| {
            let h = Sha256::digest(token.as_bytes());
            let idx = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as usize % self.dim;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            (idx, sign)
        };
        for t in &tokens {
            let (i, s) = bucket(t);
            v[i] += s;
        }
        if v.iter().all(|&x| x == 0.0) {
            // No tokens, or tokens that cancel out: fall back to the whole text.
            let (i, _) = bucket(text);
            v[i] = 1.0;
        }
        v
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        Ok(texts
            .iter()
            .map(|t| self.overrides.get(t).cloned().unwrap_or_else(|| self.hashed(t)))
            .collect())
    }
}

/// Live `/embeddings` backend (`{"model", "input": [..]}` in, `data[].embedding` out).
pub struct HttpEmbedder {
    id: String,
    model: String,
    dim: usize,
    http: HttpClient,
}

impl HttpEmbedder {
    pub fn new(cfg: &HttpConfig, model: &str, dim: usize) -> Result<Self, LlmError> {
        Ok(Self {
            id: format!("embed:{}:{model}", cfg.endpoint),
            model: model.to_string(),
            dim,
            http: HttpClient::new(cfg)?,
        })
    }
}

pub(crate) fn parse_embeddings(body: &Value, expected: usize) -> Result<Vec<Vec<f64>>, LlmError> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| LlmError::Retryable("embedding response has no data".into()))?;
    let mut out: Vec<Option<Vec<f64>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let i = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let vec = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::Retryable("embedding item without vector".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| LlmError::Fatal("non-numeric embedding".into())))
            .collect::<Result<Vec<_>, _>>()?;
        match out.get_mut(i) {
            Some(slot) => *slot = Some(vec),
            None => return Err(LlmError::Fatal(format!("embedding index {i} out of range"))),
        }
    }
    out.into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| LlmError::Retryable("embedding response is missing items".into()))
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let body = self.http.post(&json!({"model": self.model, "input": texts}))?;
        parse_embeddings(&body, texts.len())
    }
}
