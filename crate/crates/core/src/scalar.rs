//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// floating point: f32 or f64
pub trait Scalar:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Smallest probability passed to a logarithm.
    #[inline]
    fn prob_floor() -> Self {
        Self::lit(1e-300).max(Self::min_positive_value())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how the caller schedules work.
pub fn pairwise_sum<T: Scalar>(values: &[T]) -> T {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        let mut acc = T::zero();
        for &v in values {
            acc += v;
        }
        acc
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Inverse of a step CDF by linear interpolation between the two support
/// points whose CDF values bracket `p`. `support` must be non-decreasing and
/// `cdf` non-decreasing with the same length. For `p <= cdf[0]` the first
/// support point is returned.
pub fn interpolated_inverse<T: Scalar>(support: &[T], cdf: &[T], p: T) -> T {
    debug_assert_eq!(support.len(), cdf.len());
    debug_assert!(!support.is_empty());
    let i = cdf.partition_point(|&f| f < p);
    if i == 0 {
        return support[0];
    }
    if i >= support.len() {
        return support[support.len() - 1];
    }
    let (f_lo, f_hi) = (cdf[i - 1], cdf[i]);
    let (y_lo, y_hi) = (support[i - 1], support[i]);
    y_lo + (p - f_lo) * (y_hi - y_lo) / (f_hi - f_lo)
}

/// Linear-interpolation empirical quantile of an already sorted sample, using
/// the empirical CDF `i / n` at the `i`-th order statistic and
/// [`interpolated_inverse`].
pub fn empirical_quantile<T: Scalar>(sorted: &[T], p: T) -> T {
    let n = T::from_count(sorted.len());
    let cdf: Vec<T> = (1..=sorted.len()).map(|i| T::from_count(i) / n).collect();
    interpolated_inverse(sorted, &cdf, p)
}
