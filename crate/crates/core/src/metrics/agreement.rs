use super::MetricError;
use crate::scalar::Scalar;

/// True iff a strict majority of votes is true. Ties resolve to false.
pub fn majority_vote(votes: &[bool]) -> Result<bool, MetricError> {
    if votes.is_empty() {
        return Err(MetricError::NoVotes);
    }
    let yes = votes.iter().filter(|&&v| v).count();
    Ok(2 * yes > votes.len())
}

/// Fleiss' kappa over an items × categories count matrix in which every row
/// sums to the same rater count `n ≥ 2`.
pub fn fleiss_kappa<T: Scalar>(matrix: &[Vec<usize>]) -> Result<T, MetricError> {
    if matrix.len() < 2 {
        return Err(MetricError::InvalidMatrix("need at least 2 items".into()));
    }
    let categories = matrix[0].len();
    if categories == 0 {
        return Err(MetricError::InvalidMatrix("no categories".into()));
    }
    let raters: usize = matrix[0].iter().sum();
    if raters < 2 {
        return Err(MetricError::InvalidMatrix("need at least 2 raters per item".into()));
    }
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != categories {
            return Err(MetricError::InvalidMatrix(format!(
                "row {i} has {} categories, expected {categories}",
                row.len()
            )));
        }
        let sum: usize = row.iter().sum();
        if sum != raters {
            return Err(MetricError::InvalidMatrix(format!(
                "row {i} sums to {sum}, expected {raters}"
            )));
        }
    }

    let items = T::from_count(matrix.len());
    let n = T::from_count(raters);

    // agreement per item: (Σ n_ij² − n) / (n (n − 1))
    let p_bar = matrix
        .iter()
        .map(|row| {
            let sq: usize = row.iter().map(|&c| c * c).sum();
            T::from_count(sq - raters) / (n * (n - T::one()))
        })
        .fold(T::zero(), |a, b| a + b)
        / items;

    let total = items * n;
    let p_e = (0..categories)
        .map(|j| {
            let p_j = T::from_count(matrix.iter().map(|row| row[j]).sum()) / total;
            p_j * p_j
        })
        .fold(T::zero(), |a, b| a + b);

    if p_e >= T::one() {
        return Err(MetricError::DegenerateAgreement);
    }
    Ok((p_bar - p_e) / (T::one() - p_e))
}
