//! Floating-point abstraction shared by the kernel, linear algebra, GP and
//! acquisition code.
//!
//! Everything numeric in the model layer is written against [`Scalar`] so the
//! same code runs in `f32` (cheap screening) and `f64` (the default, and what
//! the optimization loop uses). The special functions that have no generic
//! counterpart in `num_traits` (`erfc`) are evaluated in `f64` and converted
//! back.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal or configuration value.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Complementary error function.
    #[inline]
    fn erfc(self) -> Self {
        Self::of(libm::erfc(self.as_f64()))
    }

    /// Standard normal density.
    #[inline]
    fn norm_pdf(self) -> Self {
        let inv_sqrt_2pi = Self::of(0.398_942_280_401_432_7);
        inv_sqrt_2pi * (-(self * self) / Self::of(2.0)).exp()
    }

    /// Standard normal distribution function.
    #[inline]
    fn norm_cdf(self) -> Self {
        Self::of(0.5) * (-self / Self::of(std::f64::consts::SQRT_2)).erfc()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
