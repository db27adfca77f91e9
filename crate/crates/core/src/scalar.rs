//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossless for f64, exact for anything that came from an f32.
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float converts to f64")
    }

    fn of_usize(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize is representable")
    }

    fn to_f32_bits(self) -> u32 {
        (ToPrimitive::to_f32(&self).expect("float converts to f32")).to_bits()
    }

    fn from_f32_bits(bits: u32) -> Self {
        <Self as FromPrimitive>::from_f32(f32::from_bits(bits)).expect("f32 is representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for literal constants inside generic code.
#[inline]
pub fn c<T: Scalar>(v: f64) -> T {
    T::of_f64(v)
}
