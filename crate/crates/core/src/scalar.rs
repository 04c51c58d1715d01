//! Scalar abstraction for all numerical kernels.
//!
//! Every module in this crate is generic over a floating-point scalar
//! implementing [`Real`]; `f32` and `f64` both qualify. Concrete type
//! aliases for the common `f64` instantiation live at the crate root.
//!
//! Random draws are generated in `f64` and converted (see [`crate::rng`]),
//! so a given stream key yields the same sequence for every scalar type up
//! to rounding in the final conversion.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable by every kernel in this crate.
///
/// The bound collects what the kernels actually need: IEEE arithmetic with
/// transcendentals ([`Float`]), conversion from primitive literals and
/// indices ([`FromPrimitive`]), compound assignment, summation, printing,
/// and thread safety for the parallel replica driver.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Convert an `f64` constant into `Self` (exact for `f64`, correctly
    /// rounded for `f32`). Panics only on non-finite input, which would be
    /// a programming error for the literals this is used with.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal converts to scalar")
    }

    /// Convert a count or index into `Self`.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_conversion_is_exact_for_f64() {
        assert_eq!(f64::of(0.1), 0.1);
        assert_eq!(f64::of_usize(12_345), 12_345.0);
        assert_eq!(f32::of(1.5), 1.5_f32);
    }

    fn generic_norm<T: Real>(xs: &[T]) -> T {
        xs.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    #[test]
    fn kernels_work_for_both_widths() {
        assert!((generic_norm(&[3.0_f64, 4.0]) - 5.0).abs() < 1e-15);
        assert!((generic_norm(&[3.0_f32, 4.0]) - 5.0).abs() < 1e-6);
    }
}
