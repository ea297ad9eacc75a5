use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::scalar::Scalar;

/// Gain applied to a relevance grade inside DCG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// gain = grade
    #[default]
    Linear,
    /// gain = 2^grade - 1
    Exponential,
}

impl Gain {
    fn apply<T: Scalar>(self, grade: u32) -> T {
        match self {
            Gain::Linear => T::from_u32(grade).expect("grade fits scalar"),
            Gain::Exponential => T::lit(2.0).powi(grade as i32) - T::one(),
        }
    }
}

/// Positions (1-based) of the first occurrence of every distinct id.
fn distinct<I: Eq + Hash>(ranking: &[I]) -> impl Iterator<Item = (usize, &I)> {
    let mut seen = HashSet::new();
    ranking
        .iter()
        .filter(move |id| seen.insert(*id))
        .enumerate()
        .map(|(i, id)| (i + 1, id))
}

/// Mean over relevant items of precision at that item's rank. Relevant items
/// missing from the ranking contribute zero.
pub fn average_precision<T: Scalar, I: Eq + Hash>(
    ranking: &[I],
    relevant: &HashSet<I>,
) -> Result<T, MetricError> {
    if relevant.is_empty() {
        return Err(MetricError::NoRelevant);
    }
    let mut hits = 0usize;
    let mut sum = T::zero();
    for (rank, id) in distinct(ranking) {
        if relevant.contains(id) {
            hits += 1;
            sum = sum + T::from_count(hits) / T::from_count(rank);
        }
    }
    Ok(sum / T::from_count(relevant.len()))
}

/// 1 / rank of the first relevant item, or 0 when none is ranked.
pub fn reciprocal_rank<T: Scalar, I: Eq + Hash>(
    ranking: &[I],
    relevant: &HashSet<I>,
) -> Result<T, MetricError> {
    if relevant.is_empty() {
        return Err(MetricError::NoRelevant);
    }
    Ok(distinct(ranking)
        .find(|(_, id)| relevant.contains(*id))
        .map_or(T::zero(), |(rank, _)| T::one() / T::from_count(rank)))
}

pub fn mean_reciprocal_rank<T: Scalar, I: Eq + Hash>(
    queries: &[(&[I], &HashSet<I>)],
) -> Result<T, MetricError> {
    if queries.is_empty() {
        return Err(MetricError::NoQueries);
    }
    let mut sum = T::zero();
    for (ranking, relevant) in queries {
        sum = sum + reciprocal_rank::<T, I>(ranking, relevant)?;
    }
    Ok(sum / T::from_count(queries.len()))
}

fn relevant_in_top_k<I: Eq + Hash>(ranking: &[I], relevant: &HashSet<I>, k: usize) -> usize {
    distinct(ranking)
        .take_while(|(rank, _)| *rank <= k)
        .filter(|(_, id)| relevant.contains(*id))
        .count()
}

/// |relevant ∩ top-k| / k. The denominator stays `k` even when the ranking is
/// shorter.
pub fn precision_at_k<T: Scalar, I: Eq + Hash>(
    ranking: &[I],
    relevant: &HashSet<I>,
    k: usize,
) -> Result<T, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    Ok(T::from_count(relevant_in_top_k(ranking, relevant, k)) / T::from_count(k))
}

pub fn hits_at_k<T: Scalar, I: Eq + Hash>(
    ranking: &[I],
    relevant: &HashSet<I>,
    k: usize,
) -> Result<T, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    Ok(if relevant_in_top_k(ranking, relevant, k) > 0 {
        T::one()
    } else {
        T::zero()
    })
}

/// DCG@k / IDCG@k with `DCG@k = Σ gain(grade_i) / log2(i + 1)`. The ideal
/// ordering uses every graded item, not only the ranked ones. Ungraded items
/// have grade 0.
pub fn ndcg_at_k<T: Scalar, I: Eq + Hash>(
    ranking: &[I],
    grades: &HashMap<I, u32>,
    k: usize,
    gain: Gain,
) -> Result<T, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    let discount = |rank: usize| T::from_count(rank + 1).log2();
    let dcg = distinct(ranking)
        .take_while(|(rank, _)| *rank <= k)
        .fold(T::zero(), |acc, (rank, id)| {
            let grade = grades.get(id).copied().unwrap_or(0);
            acc + gain.apply::<T>(grade) / discount(rank)
        });

    let mut ideal: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return Err(MetricError::NoPositiveGrade);
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = ideal
        .iter()
        .take(k)
        .enumerate()
        .fold(T::zero(), |acc, (i, &g)| acc + gain.apply::<T>(g) / discount(i + 1));
    Ok(dcg / idcg)
}
