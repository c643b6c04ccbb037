//! Scalar abstraction shared by the numeric code.
//!
//! Estimators, model fits and samplers are written against [`Scalar`] so the
//! same code runs in `f64` (the default everywhere) or `f32`. The enumeration
//! oracle in [`crate::simulate`] only needs field operations and accepts any
//! [`num_traits::Num`] type, including exact rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the target type cannot
    /// represent finite `f64` values, which no supported float does.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal is representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

/// Logistic function, guarded against overflow for large negative arguments.
#[inline]
pub fn expit<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().copied().sum::<T>() / T::from_count(xs.len())
}

/// Unbiased sample variance (denominator `n - 1`), corrected two-pass form.
pub fn sample_variance<T: Scalar>(xs: &[T]) -> T {
    let n = xs.len();
    if n < 2 {
        return T::nan();
    }
    let m = mean(xs);
    let (ss, s) = xs.iter().fold((T::zero(), T::zero()), |(ss, s), &x| (ss + (x - m) * (x - m), s + (x - m)));
    ((ss - s * s / T::from_count(n)) / T::from_count(n - 1)).max(T::zero())
}
