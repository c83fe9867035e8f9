//! Floating-point scalar abstraction: every numeric path in this crate is
//! generic over [`Scalar`], implemented for `f32` and `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Casts an `f64` constant into this scalar type.
    fn from_f(v: f64) -> Self {
        Self::from_f64(v).expect("f64 cast")
    }

    /// Casts a count into this scalar type.
    fn from_count(v: usize) -> Self {
        Self::from_usize(v).expect("usize cast")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
