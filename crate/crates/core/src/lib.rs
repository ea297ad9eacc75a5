//! GUI prototyping with large language models: a screen repository with
//! caption retrieval and LLM re-ranking, five prompting strategies that turn a
//! short requirement into an HTML/CSS prototype, a content pass that fills in
//! data and images, and the metrics used to evaluate all of it.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which the command line tool uses.

pub mod content;
pub mod htmlio;
pub mod llm;
pub mod metrics;
pub mod repository;
pub mod rerank;
pub mod retrieval;
pub mod scalar;
pub mod session;
pub mod strategies;
pub mod templates;

pub use scalar::Scalar;

/// Default scalar.
pub type Real = f64;

pub type EmbeddingVector = retrieval::EmbeddingVector<Real>;
pub type RetrievalIndex = retrieval::RetrievalIndex<Real>;
pub type RankedList = retrieval::RankedList<Real>;
pub type FineScore = rerank::FineScore<Real>;
pub type RerankedList = rerank::RerankedList<Real>;
pub type RerankOutcome = rerank::RerankOutcome<Real>;
pub type MetricReport = metrics::MetricReport<Real>;
pub type WilcoxonResult = metrics::WilcoxonResult<Real>;
pub type PairedSamples = metrics::PairedSamples<Real>;
pub type Prf = metrics::Prf<Real>;

/// Single-precision variants, e.g. for large embedding indexes.
pub mod f32 {
    pub type EmbeddingVector = crate::retrieval::EmbeddingVector<f32>;
    pub type RetrievalIndex = crate::retrieval::RetrievalIndex<f32>;
    pub type RankedList = crate::retrieval::RankedList<f32>;
}
