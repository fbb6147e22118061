//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the numeric modules are generic over.
///
/// Implemented for `f32` and `f64`. Time bookkeeping (segment boundaries,
/// RTTM, DER) stays in `f64`; only embedding-space math uses this trait.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used when seeding generic data from
    /// double-precision sources (config values, RNG streams, file headers).
    fn from_f64_lossy(value: f64) -> Self {
        Self::from(value).expect("finite f64 converts to any float scalar")
    }

    /// Widening (or identity) conversion to `f64` for reporting.
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
