use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::MetricError;
use crate::scalar::Scalar;

/// Largest number of non-zero differences for which `TestMode::Auto` uses the
/// exact null distribution.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSamples<T> {
    pairs: Vec<(T, T)>,
}

impl<T: Scalar> PairedSamples<T> {
    pub fn new(pairs: Vec<(T, T)>) -> Result<Self, MetricError> {
        if pairs.is_empty() {
            return Err(MetricError::InvalidPairs);
        }
        Ok(Self { pairs })
    }

    pub fn from_columns(a: &[T], b: &[T]) -> Result<Self, MetricError> {
        if a.len() != b.len() {
            return Err(MetricError::InvalidPairs);
        }
        Self::new(a.iter().copied().zip(b.iter().copied()).collect())
    }

    pub fn pairs(&self) -> &[(T, T)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMode {
    Exact,
    Approx,
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult<T> {
    /// min(W+, W−)
    pub statistic: T,
    pub w_plus: T,
    pub w_minus: T,
    pub p_two_sided: T,
    /// Pairs left after discarding zero differences.
    pub n_used: usize,
    pub n_zero: usize,
    /// `Exact` or `Approx`; never `Auto`.
    pub mode: TestMode,
}

/// Ranks of |d| with mid-ranks for ties, doubled so every rank is an integer.
fn doubled_ranks<T: Scalar>(abs: &[T]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&i, &j| abs[i].partial_cmp(&abs[j]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0u64; abs.len()];
    let mut tie_sizes = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && abs[order[end + 1]] == abs[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end+1, mid-rank doubled = (start+1)+(end+1)
        let doubled = (start + end + 2) as u64;
        for &idx in &order[start..=end] {
            ranks[idx] = doubled;
        }
        tie_sizes.push(end - start + 1);
        start = end + 1;
    }
    (ranks, tie_sizes)
}

/// P(W+ ≤ w) under the null, where every rank independently carries a positive
/// sign with probability 1/2. Works on doubled ranks.
fn exact_lower_tail<T: Scalar>(doubled_ranks: &[u64], doubled_w: u64) -> T {
    let total: u64 = doubled_ranks.iter().sum();
    let mut dist = vec![T::zero(); total as usize + 1];
    dist[0] = T::one();
    let half = T::lit(0.5);
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach + r).rev() {
            let keep = if s <= reach { dist[s] } else { T::zero() };
            let add = if s >= r { dist[s - r] } else { T::zero() };
            dist[s] = half * (keep + add);
        }
        reach += r;
    }
    dist.iter()
        .take(doubled_w as usize + 1)
        .fold(T::zero(), |a, &b| a + b)
}

pub fn wilcoxon_signed_rank<T: Scalar>(
    samples: &PairedSamples<T>,
    mode: TestMode,
) -> Result<WilcoxonResult<T>, MetricError> {
    let diffs: Vec<T> = samples
        .pairs()
        .iter()
        .map(|&(a, b)| a - b)
        .filter(|d| *d != T::zero())
        .collect();
    let n_zero = samples.len() - diffs.len();
    let m = diffs.len();
    if m == 0 {
        return Err(MetricError::DegeneratePairs);
    }

    let abs: Vec<T> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let w_plus_2: u64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > T::zero())
        .map(|(r, _)| *r)
        .sum();
    let w_minus_2 = total - w_plus_2;
    let stat_2 = w_plus_2.min(w_minus_2);

    let mode = match mode {
        TestMode::Auto if m <= EXACT_LIMIT => TestMode::Exact,
        TestMode::Auto => TestMode::Approx,
        other => other,
    };

    let p = match mode {
        TestMode::Exact => T::lit(2.0) * exact_lower_tail::<T>(&ranks, stat_2),
        _ => {
            let mf = m as f64;
            let mean = mf * (mf + 1.0) / 4.0;
            let tie_term: f64 = ties
                .iter()
                .map(|&t| {
                    let t = t as f64;
                    t * t * t - t
                })
                .sum();
            let var = mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0 - tie_term / 48.0;
            let w_plus = w_plus_2 as f64 / 2.0;
            let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
            // Normal tail plus the Edgeworth kurtosis term; W+ is symmetric so
            // the skewness term vanishes. Each rank r adds -r^4/8 to the
            // fourth cumulant.
            let kappa4: f64 = -ranks.iter().map(|&r| (r as f64 / 2.0).powi(4)).sum::<f64>() / 8.0;
            let excess = kappa4 / (var * var);
            let x = -z;
            let density = (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let lower = erfc(z / std::f64::consts::SQRT_2) / 2.0 - density * excess / 24.0 * (x * x * x - 3.0 * x);
            T::lit((2.0 * lower).max(0.0))
        }
    };

    let half = |v: u64| T::from_u64(v).expect("rank sum fits scalar") / T::lit(2.0);
    Ok(WilcoxonResult {
        statistic: half(stat_2),
        w_plus: half(w_plus_2),
        w_minus: half(w_minus_2),
        p_two_sided: p.min(T::one()),
        n_used: m,
        n_zero,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diffs(d: &[f64]) -> PairedSamples<f64> {
        PairedSamples::new(d.iter().map(|&x| (x, 0.0)).collect()).unwrap()
    }

    #[test]
    fn all_positive_five() {
        let r = wilcoxon_signed_rank(&diffs(&[1.0, 2.0, 3.0, 4.0, 5.0]), TestMode::Auto).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.w_plus, 15.0);
        assert_eq!(r.mode, TestMode::Exact);
        assert!((r.p_two_sided - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn zero_differences_are_discarded() {
        let r = wilcoxon_signed_rank(&diffs(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]), TestMode::Exact)
            .unwrap();
        assert_eq!(r.n_zero, 1);
        assert_eq!(r.n_used, 5);
        assert!((r.p_two_sided - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn all_zero_is_degenerate() {
        assert_eq!(
            wilcoxon_signed_rank(&diffs(&[0.0, 0.0]), TestMode::Auto),
            Err(MetricError::DegeneratePairs)
        );
    }

    #[test]
    fn sign_flip_gives_same_p() {
        let d = [1.5, -2.0, 3.0, 3.0, -0.5, 4.0];
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let a = wilcoxon_signed_rank(&diffs(&d), TestMode::Exact).unwrap();
        let b = wilcoxon_signed_rank(&diffs(&neg), TestMode::Exact).unwrap();
        assert_eq!(a.p_two_sided, b.p_two_sided);
        assert_eq!(a.statistic, b.statistic);
    }

    #[test]
    fn ties_get_mid_ranks() {
        let (r, t) = doubled_ranks(&[2.0_f64, 1.0, 2.0, 3.0]);
        assert_eq!(r, vec![5, 2, 5, 8]);
        assert_eq!(t, vec![1, 2, 1]);
    }

    #[test]
    fn balanced_signs_cap_at_one() {
        let r = wilcoxon_signed_rank(&diffs(&[1.0, -1.0]), TestMode::Exact).unwrap();
        assert_eq!(r.p_two_sided, 1.0);
        let r = wilcoxon_signed_rank(&diffs(&[1.0, -1.0]), TestMode::Approx).unwrap();
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn unequal_columns_rejected() {
        assert_eq!(
            PairedSamples::from_columns(&[1.0_f64], &[]),
            Err(MetricError::InvalidPairs)
        );
    }
}
