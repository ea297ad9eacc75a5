use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    average_precision, fleiss_kappa, hits_at_k, majority_vote, ndcg_at_k, precision_at_k,
    reciprocal_rank, Gain, MetricError,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldQuery {
    #[serde(default)]
    pub nlr: String,
    /// screen_id → grade; grades above zero count as relevant for the binary
    /// metrics.
    pub relevance: BTreeMap<String, u32>,
}

impl GoldQuery {
    pub fn relevant(&self) -> HashSet<&str> {
        self.relevance
            .iter()
            .filter(|(_, &g)| g > 0)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    fn grades(&self) -> HashMap<&str, u32> {
        self.relevance.iter().map(|(id, &g)| (id.as_str(), g)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldStandard {
    pub queries: BTreeMap<String, GoldQuery>,
}

impl GoldStandard {
    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let text = read(path)?;
        serde_json::from_str(&text).map_err(|e| format_err(path, e))
    }
}

/// query_id → ranked screen ids.
pub type Runs = BTreeMap<String, Vec<String>>;

pub fn load_runs(path: &Path) -> Result<Runs, MetricError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<T> {
    /// Metric name (`AP`, `MRR`, `P@k`, `H@k`, `NDCG@k`) → mean over the
    /// evaluated queries.
    pub metrics: BTreeMap<String, T>,
    pub ks: Vec<usize>,
    pub gain: Gain,
    pub evaluated_queries: usize,
    /// Queries present in the runs but absent from the gold standard.
    pub skipped_unknown: Vec<String>,
    /// Gold queries without a single positive grade.
    pub skipped_no_relevant: Vec<String>,
    /// Gold queries for which the runs contain no ranking.
    pub missing_runs: Vec<String>,
}

/// Averages every ranking metric over the queries present in both the gold
/// standard and the runs.
pub fn eval_ranking_suite<T: Scalar>(
    gold: &GoldStandard,
    runs: &Runs,
    ks: &[usize],
    gain: Gain,
) -> Result<MetricReport<T>, MetricError> {
    if ks.contains(&0) {
        return Err(MetricError::ZeroCutoff);
    }
    let mut sums: BTreeMap<String, T> = BTreeMap::new();
    let mut add = |name: String, v: T| {
        let slot = sums.entry(name).or_insert_with(T::zero);
        *slot = *slot + v;
    };

    let mut report = MetricReport {
        metrics: BTreeMap::new(),
        ks: ks.to_vec(),
        gain,
        evaluated_queries: 0,
        skipped_unknown: Vec::new(),
        skipped_no_relevant: Vec::new(),
        missing_runs: Vec::new(),
    };

    for (qid, ranking) in runs {
        let Some(query) = gold.queries.get(qid) else {
            log::warn!("query {qid} has no gold judgments; skipped");
            report.skipped_unknown.push(qid.clone());
            continue;
        };
        let relevant = query.relevant();
        if relevant.is_empty() {
            log::warn!("query {qid} has no relevant screens in the gold standard; skipped");
            report.skipped_no_relevant.push(qid.clone());
            continue;
        }
        let ranking: Vec<&str> = ranking.iter().map(String::as_str).collect();
        let grades = query.grades();

        add("AP".into(), average_precision(&ranking, &relevant)?);
        add("MRR".into(), reciprocal_rank(&ranking, &relevant)?);
        for &k in ks {
            add(format!("P@{k}"), precision_at_k(&ranking, &relevant, k)?);
            add(format!("H@{k}"), hits_at_k(&ranking, &relevant, k)?);
            add(format!("NDCG@{k}"), ndcg_at_k(&ranking, &grades, k, gain)?);
        }
        report.evaluated_queries += 1;
    }
    report.missing_runs = gold
        .queries
        .keys()
        .filter(|q| !runs.contains_key(*q))
        .cloned()
        .collect();

    if report.evaluated_queries == 0 {
        return Err(MetricError::NoQueries);
    }
    let n = T::from_count(report.evaluated_queries);
    report.metrics = sums.into_iter().map(|(k, v)| (k, v / n)).collect();
    Ok(report)
}

/// One binary judgment collected from several annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub query_id: String,
    pub screen_id: String,
    pub votes: Vec<bool>,
}

/// Majority-vote ground truth plus the annotator count matrix it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryGroundTruth {
    /// (query_id, screen_id, majority verdict)
    pub judgments: Vec<(String, String, bool)>,
    /// Per item `[relevant votes, non-relevant votes]`.
    pub annotator_matrix: Vec<Vec<usize>>,
    pub annotators: usize,
}

impl BinaryGroundTruth {
    pub fn from_votes(records: &[VoteRecord]) -> Result<Self, MetricError> {
        let Some(first) = records.first() else {
            return Err(MetricError::NoVotes);
        };
        let annotators = first.votes.len();
        if annotators < 2 {
            return Err(MetricError::InvalidMatrix("need at least 2 annotators".into()));
        }
        let mut judgments = Vec::with_capacity(records.len());
        let mut matrix = Vec::with_capacity(records.len());
        for r in records {
            if r.votes.len() != annotators {
                return Err(MetricError::InvalidMatrix(format!(
                    "{}/{} has {} votes, expected {annotators}",
                    r.query_id,
                    r.screen_id,
                    r.votes.len()
                )));
            }
            let yes = r.votes.iter().filter(|&&v| v).count();
            matrix.push(vec![yes, annotators - yes]);
            judgments.push((r.query_id.clone(), r.screen_id.clone(), majority_vote(&r.votes)?));
        }
        Ok(Self {
            judgments,
            annotator_matrix: matrix,
            annotators,
        })
    }

    pub fn kappa<T: Scalar>(&self) -> Result<T, MetricError> {
        fleiss_kappa(&self.annotator_matrix)
    }

    /// Screens judged relevant for `query_id`.
    pub fn relevant_for(&self, query_id: &str) -> HashSet<&str> {
        self.judgments
            .iter()
            .filter(|(q, _, rel)| q == query_id && *rel)
            .map(|(_, s, _)| s.as_str())
            .collect()
    }
}

#[derive(Deserialize)]
struct ScoreLine<T> {
    item_id: String,
    value: T,
}

/// Reads a line-delimited `{item_id, value}` score file.
pub fn read_score_file<T: Scalar>(path: &Path) -> Result<BTreeMap<String, T>, MetricError> {
    let text = read(path)?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreLine<T> = serde_json::from_str(line).map_err(|e| MetricError::Format {
            path: path.display().to_string(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        if !rec.value.is_finite() {
            return Err(MetricError::Format {
                path: path.display().to_string(),
                message: format!("line {}: non-finite value", lineno + 1),
            });
        }
        if out.insert(rec.item_id.clone(), rec.value).is_some() {
            return Err(MetricError::Format {
                path: path.display().to_string(),
                message: format!("duplicate item_id {}", rec.item_id),
            });
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, MetricError> {
    std::fs::read_to_string(path).map_err(|e| MetricError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn format_err(path: &Path, e: serde_json::Error) -> MetricError {
    MetricError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
