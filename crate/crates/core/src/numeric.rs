//! Scalar abstraction shared by the similarity, softmax, KL and optimizer code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar used by the numeric core: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; constants in the numeric code go through here.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    fn count(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable softmax of `logits / temperature` (max-subtraction).
///
/// Returns `None` for empty input, non-finite logits or a non-positive temperature.
pub fn softmax_with_temperature<T: Scalar>(logits: &[T], temperature: T) -> Option<Vec<T>> {
    if logits.is_empty() || !(temperature > T::zero()) || !temperature.is_finite() {
        return None;
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let scaled: Vec<T> = logits.iter().map(|&v| v / temperature).collect();
    let max = scaled.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scaled.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Some(exps.into_iter().map(|e| e / total).collect())
}

/// `ln Σ exp(v)` computed with max-subtraction. Empty input yields `-inf`.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let total: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + total.ln()
}
