use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::scalar::Scalar;

/// Precision, recall and F1 of a predicted set against a truth set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from<T: Scalar>(precision: T, recall: T) -> T {
    let denom = precision + recall;
    if denom == T::zero() {
        T::zero()
    } else {
        T::lit(2.0) * precision * recall / denom
    }
}

/// Precision is 0 for an empty prediction.
pub fn precision_recall_f1<T: Scalar, I: Eq + Hash>(
    predicted: &HashSet<I>,
    truth: &HashSet<I>,
) -> Result<Prf<T>, MetricError> {
    if truth.is_empty() {
        return Err(MetricError::EmptyTruth);
    }
    let tp = T::from_count(predicted.intersection(truth).count());
    let precision = if predicted.is_empty() {
        T::zero()
    } else {
        tp / T::from_count(predicted.len())
    };
    let recall = tp / T::from_count(truth.len());
    Ok(Prf {
        precision,
        recall,
        f1: f1_from(precision, recall),
    })
}
