//! Floating-point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type used by embeddings, ranking metrics and statistics.
///
/// Implemented for `f32` and `f64`. Everything that computes a score is
/// written against this trait; the crate root exposes `f64` aliases for the
/// common case.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Every `f64` is representable (possibly
    /// rounded) in the implementing types.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal fits scalar")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Mean and population standard deviation. Returns `None` for an empty slice.
pub fn mean_and_population_std<T: Scalar>(values: &[T]) -> Option<(T, T)> {
    if values.is_empty() {
        return None;
    }
    let n = T::from_count(values.len());
    let mean = values.iter().fold(T::zero(), |acc, &v| acc + v) / n;
    let var = values
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean))
        / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_of_seven_eight_nine() {
        let (m, s) = mean_and_population_std(&[7.0_f64, 8.0, 9.0]).unwrap();
        assert_eq!(m, 8.0);
        assert!((s - (2.0_f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn works_for_f32() {
        let (m, s) = mean_and_population_std(&[10.0_f32]).unwrap();
        assert_eq!(m, 10.0);
        assert_eq!(s, 0.0);
        assert!(mean_and_population_std::<f32>(&[]).is_none());
    }
}
