//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Real`]; the shipped
//! pipeline runs on `f64` (see the type aliases at the crate root), with
//! `f32` available for experiments.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the tensor engine, geometry and
/// optimizer. Implemented for `f32` and `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`. Every finite `f64` is representable
    /// (possibly rounded), so this never fails for the values this crate
    /// produces.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Real")
    }

    /// Widening conversion to `f64` for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand used all over the crate for typed numeric literals.
pub fn r<R: Real>(x: f64) -> R {
    R::from_f64_lossy(x)
}
