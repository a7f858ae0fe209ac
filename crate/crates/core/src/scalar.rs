//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type the numeric core is generic over.
///
/// Implemented for `f32` and `f64`. Archives are always `f32` on disk; the
/// linear algebra can run in either precision.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`. Never fails for the implemented types.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
