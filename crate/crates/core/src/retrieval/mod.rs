//! Caption embeddings, the retrieval index, top-n screen retrieval by cosine
//! similarity, and the lexical BM25 baseline.

mod bm25;
mod embed;
mod index;

pub use bm25::{bm25_retrieve, bm25_scores, tokenize, Bm25Params};
pub use embed::{EmbeddingProvider, HttpEmbedder, MockEmbedder};
pub use index::{build_index, resume_index, BuildOptions, IndexBuildError, IndexEntry, RetrievalIndex};

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmError;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding provider: {0}")]
    Provider(LlmError),
    #[error("text #{0} is empty")]
    EmptyText(usize),
    #[error("vector dimension {got} does not match expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("index was built with provider {index} but the query provider is {query}")]
    ProviderMismatch { index: String, query: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: malformed index: {message}")]
    Format { path: String, message: String },
}

impl RetrievalError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RetrievalError::Provider(e) if e.is_retryable())
    }
}

/// A finite, non-empty dense vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, RetrievalError> {
        if values.is_empty() {
            return Err(RetrievalError::Invalid("embedding has no components".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn from_f64(values: &[f64]) -> Result<Self, RetrievalError> {
        Self::new(values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn scaled(&self, factor: T) -> Result<Self, RetrievalError> {
        Self::new(self.values.iter().map(|&v| v * factor).collect())
    }
}

impl<'de, T: Scalar> Deserialize<'de> for EmbeddingVector<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<T>::deserialize(d)?;
        Self::new(values).map_err(serde::de::Error::custom)
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity<T: Scalar>(
    a: &EmbeddingVector<T>,
    b: &EmbeddingVector<T>,
) -> Result<T, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.values.iter().zip(&b.values) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na == T::zero() || nb == T::zero() {
        return Err(RetrievalError::ZeroVector);
    }
    let c = dot / (na.sqrt() * nb.sqrt());
    Ok(c.max(-T::one()).min(T::one()))
}

/// Embeds every text, checking emptiness, count and dimension.
pub fn embed<T: Scalar>(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
) -> Result<Vec<EmbeddingVector<T>>, RetrievalError> {
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(RetrievalError::EmptyText(i));
    }
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let raw = provider.embed(texts).map_err(RetrievalError::Provider)?;
    if raw.len() != texts.len() {
        return Err(RetrievalError::Provider(LlmError::Fatal(format!(
            "{} vectors for {} texts",
            raw.len(),
            texts.len()
        ))));
    }
    raw.iter()
        .map(|v| {
            if v.len() != provider.dim() {
                return Err(RetrievalError::DimMismatch {
                    expected: provider.dim(),
                    got: v.len(),
                });
            }
            EmbeddingVector::from_f64(v)
        })
        .collect()
}

pub const RETRIEVAL_STAGE: &str = "retrieval";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem<T> {
    pub screen_id: String,
    pub score: T,
    pub stage: String,
}

/// Screens ordered by score descending, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList<T> {
    pub query: String,
    pub n: usize,
    pub items: Vec<RankedItem<T>>,
}

impl<T: Scalar> RankedList<T> {
    pub fn screen_ids(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.screen_id.as_str()).collect()
    }
}

/// Score-descending, id-ascending order used for every ranked list.
pub(crate) fn by_score_then_id<T: Scalar>(a: (&str, T), b: (&str, T)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
}

/// Keeps the `n` best `(id, score)` pairs in ranked order.
pub(crate) fn top_n<T: Scalar>(mut scored: Vec<(String, T)>, n: usize, query: &str, stage: &str) -> RankedList<T> {
    let cmp = |a: &(String, T), b: &(String, T)| by_score_then_id((&a.0, a.1), (&b.0, b.1));
    if scored.len() > n && n > 0 {
        scored.select_nth_unstable_by(n - 1, cmp);
        scored.truncate(n);
    }
    scored.sort_by(cmp);
    scored.truncate(n);
    RankedList {
        query: query.to_string(),
        n,
        items: scored
            .into_iter()
            .map(|(screen_id, score)| RankedItem {
                screen_id,
                score,
                stage: stage.to_string(),
            })
            .collect(),
    }
}

/// Ranks screens by their best caption similarity to `query_vector`.
pub fn rank_by_vector<T: Scalar>(
    index: &RetrievalIndex<T>,
    query: &str,
    query_vector: &EmbeddingVector<T>,
    n: usize,
) -> Result<RankedList<T>, RetrievalError> {
    if n == 0 {
        return Err(RetrievalError::Invalid("n must be at least 1".into()));
    }
    let mut best: HashMap<&str, T> = HashMap::new();
    for e in index.entries() {
        let s = cosine_similarity(query_vector, &e.vector)?;
        best.entry(&e.screen_id)
            .and_modify(|b| {
                if s > *b {
                    *b = s
                }
            })
            .or_insert(s);
    }
    let scored = best.into_iter().map(|(id, s)| (id.to_string(), s)).collect();
    Ok(top_n(scored, n, query, RETRIEVAL_STAGE))
}

/// The `n` screens whose captions best match `nlr`.
pub fn retrieve_top_n<T: Scalar>(
    index: &RetrievalIndex<T>,
    provider: &dyn EmbeddingProvider,
    nlr: &str,
    n: usize,
) -> Result<RankedList<T>, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::Invalid("the index is empty".into()));
    }
    index.check_provider(provider)?;
    let q = embed::<T>(provider, &[nlr.to_string()])?.remove(0);
    rank_by_vector(index, nlr, &q, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_reference_values() {
        assert_abs_diff_eq!(cosine_similarity(&v(&[0.3, 2.0]), &v(&[0.3, 2.0])).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-9
        );
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(RetrievalError::ZeroVector)
        ));
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(RetrievalError::DimMismatch { .. })
        ));
    }

    #[test]
    fn vectors_reject_non_finite() {
        assert!(EmbeddingVector::<f32>::new(vec![1.0, f32::NAN]).is_err());
        assert!(serde_json::from_str::<EmbeddingVector<f64>>("[]").is_err());
    }

    #[test]
    fn embed_rejects_empty_text() {
        let m = MockEmbedder::new(8);
        assert!(matches!(
            embed::<f64>(&m, &["a".into(), " ".into()]),
            Err(RetrievalError::EmptyText(1))
        ));
        let out = embed::<f32>(&m, &["a b".into(), "c".into(), "a b".into()]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[2]);
        assert!(out.iter().all(|x| x.dim() == 8));
    }

    #[test]
    fn top_n_ties_by_id() {
        let scored = vec![("b".to_string(), 0.5), ("a".to_string(), 0.5), ("c".to_string(), 0.9)];
        let list = top_n(scored, 2, "q", RETRIEVAL_STAGE);
        assert_eq!(list.screen_ids(), vec!["c", "a"]);
    }
}
