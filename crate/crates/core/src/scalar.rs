//! Scalar abstraction shared by the physics, allocator, Q-learning and
//! distillation code.
//!
//! Everything numeric is written against [`Scalar`] so the same code runs in
//! `f32` or `f64`. The experiment harness and the CLI use `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar used throughout the crate.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + FromStr + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every finite `f64` is representable (possibly
    /// rounded) in the supported float types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::infinity)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Relative difference `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_diff<T: Scalar>(a: T, b: T, floor: T) -> T {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
