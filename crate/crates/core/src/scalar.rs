//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn two_pi() -> Self {
        Self::TAU()
    }

    /// Reduces to the unit interval `[0, 1)`.
    #[inline]
    fn wrap_unit(self) -> Self {
        let r = self - self.floor();
        if r >= Self::one() {
            Self::zero()
        } else {
            r
        }
    }

    /// Signed distance to the nearest integer translate, in `[-1/2, 1/2)`.
    #[inline]
    fn torus_delta(self) -> Self {
        let half = Self::lit(0.5);
        (self + half).wrap_unit() - half
    }
}

impl Real for f32 {}
impl Real for f64 {}
