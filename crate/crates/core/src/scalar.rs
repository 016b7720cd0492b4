//! Scalar abstraction shared by every solver in the crate.
//!
//! All numerics are written against [`Scalar`], which is implemented for
//! `f32` and `f64`. Special functions (Bessel J1, erfc) come from `libm`
//! in the matching precision.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point type usable by the solvers: f32 or f64.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Machine epsilon of the type.
    const EPS: Self;
    const INFINITY: Self;
    /// Smallest positive normal value.
    const MIN_POSITIVE: Self;

    /// Bessel function of the first kind, order one.
    fn bessel_j1(self) -> Self;

    /// Complementary error function.
    fn erf_complement(self) -> Self;

    /// Converts an `f64` literal into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f64 {
    const EPS: Self = f64::EPSILON;
    const INFINITY: Self = f64::INFINITY;
    const MIN_POSITIVE: Self = f64::MIN_POSITIVE;

    #[inline]
    fn bessel_j1(self) -> Self {
        libm::j1(self)
    }

    #[inline]
    fn erf_complement(self) -> Self {
        libm::erfc(self)
    }
}

impl Scalar for f32 {
    const EPS: Self = f32::EPSILON;
    const INFINITY: Self = f32::INFINITY;
    const MIN_POSITIVE: Self = f32::MIN_POSITIVE;

    #[inline]
    fn bessel_j1(self) -> Self {
        libm::j1f(self)
    }

    #[inline]
    fn erf_complement(self) -> Self {
        libm::erfcf(self)
    }
}

/// 2D vector used for real- and reciprocal-space coordinates.
pub type Vec2<T> = nalgebra::Vector2<T>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_first_zero() {
        assert!(3.831_705_970_207_512_f64.bessel_j1().abs() < 1e-12);
        assert!(3.831_706_f32.bessel_j1().abs() < 1e-5);
    }

    #[test]
    fn erfc_reference_values() {
        assert!((0.0_f64.erf_complement() - 1.0).abs() < 1e-15);
        assert!((1.0_f64.erf_complement() - 0.157_299_207_050_285_13).abs() < 1e-15);
        assert!((1.0_f32.erf_complement() - 0.157_299_2).abs() < 1e-6);
    }
}
