use std::collections::{BTreeSet, HashMap};

use super::{top_n, RankedList, RetrievalError};
use crate::repository::Repository;
use crate::scalar::Scalar;

pub const BM25_STAGE: &str = "bm25";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Lowercase alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Okapi BM25 of `query` against every document, summing over the distinct
/// query terms. IDF is `ln(1 + (N - n + 0.5) / (n + 0.5))`, which stays
/// positive for terms present in most documents.
pub fn bm25_scores<T: Scalar>(
    corpus: &[Vec<String>],
    query: &str,
    params: Bm25Params,
) -> Result<Vec<T>, RetrievalError> {
    if corpus.is_empty() {
        return Err(RetrievalError::Invalid("BM25 corpus is empty".into()));
    }
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    let n_docs = T::from_count(corpus.len());
    let total_len: usize = corpus.iter().map(Vec::len).sum();
    let avgdl = T::from_count(total_len) / n_docs;
    let mut scores = vec![T::zero(); corpus.len()];
    if terms.is_empty() || total_len == 0 {
        return Ok(scores);
    }
    let (k1, b) = (T::lit(params.k1), T::lit(params.b));
    let half = T::lit(0.5);
    let tfs: Vec<HashMap<&str, usize>> = corpus
        .iter()
        .map(|doc| {
            let mut m = HashMap::new();
            for t in doc {
                *m.entry(t.as_str()).or_insert(0) += 1;
            }
            m
        })
        .collect();
    for term in &terms {
        let df = tfs.iter().filter(|m| m.contains_key(term.as_str())).count();
        if df == 0 {
            continue;
        }
        let df = T::from_count(df);
        let idf = (T::one() + (n_docs - df + half) / (df + half)).ln();
        for (score, (tf, doc)) in scores.iter_mut().zip(tfs.iter().zip(corpus)) {
            let Some(&f) = tf.get(term.as_str()) else { continue };
            let f = T::from_count(f);
            let dl = T::from_count(doc.len());
            *score = *score + idf * f * (k1 + T::one()) / (f + k1 * (T::one() - b + b * dl / avgdl));
        }
    }
    Ok(scores)
}

/// Lexical baseline: each screen's captions form one document.
pub fn bm25_retrieve<T: Scalar>(
    repo: &Repository,
    query: &str,
    n: usize,
    params: Bm25Params,
) -> Result<RankedList<T>, RetrievalError> {
    if n == 0 {
        return Err(RetrievalError::Invalid("n must be at least 1".into()));
    }
    let ids: Vec<&str> = repo.ids().collect();
    let corpus: Vec<Vec<String>> = repo.screens().map(|s| tokenize(&s.captions.join(" "))).collect();
    let scores = bm25_scores::<T>(&corpus, query, params)?;
    let scored = ids.into_iter().map(str::to_string).zip(scores).collect();
    Ok(top_n(scored, n, query, BM25_STAGE))
}
