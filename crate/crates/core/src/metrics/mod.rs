//! Ranking, classification, agreement and paired-significance metrics.

mod agreement;
mod classification;
mod ranking;
mod suite;
mod wilcoxon;

pub use agreement::{fleiss_kappa, majority_vote};
pub use classification::{f1_from, precision_recall_f1, Prf};
pub use ranking::{
    average_precision, hits_at_k, mean_reciprocal_rank, ndcg_at_k, precision_at_k,
    reciprocal_rank, Gain,
};
pub use suite::{
    eval_ranking_suite, load_runs, read_score_file, BinaryGroundTruth, GoldQuery, GoldStandard, VoteRecord,
    MetricReport, Runs,
};
pub use wilcoxon::{wilcoxon_signed_rank, PairedSamples, TestMode, WilcoxonResult};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("relevant set is empty")]
    NoRelevant,
    #[error("cutoff k must be at least 1")]
    ZeroCutoff,
    #[error("no positive grade in the gold judgments")]
    NoPositiveGrade,
    #[error("truth set is empty")]
    EmptyTruth,
    #[error("no queries to average over")]
    NoQueries,
    #[error("no votes")]
    NoVotes,
    #[error("invalid rating matrix: {0}")]
    InvalidMatrix(String),
    #[error("kappa undefined: every rating falls in one category")]
    DegenerateAgreement,
    #[error("degenerate pairs: all differences are zero")]
    DegeneratePairs,
    #[error("paired samples are empty or have unequal lengths")]
    InvalidPairs,
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed input {path}: {message}")]
    Format { path: String, message: String },
}
