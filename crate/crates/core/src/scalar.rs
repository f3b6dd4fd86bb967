//! Scalar abstraction for the deterministic math (geometry, harmonic
//! function, log-domain accumulators, exponent formulas).
//!
//! Samplers work in `f64`; everything they call into is generic so the
//! closed-form pieces can be checked in `f32` as well.

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive};

/// A real scalar usable by the closed-form parts of the crate.
pub trait Real: Float + FloatConst + FromPrimitive + Debug + Default + Send + Sync + 'static {
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Real")
    }

    fn half() -> Self {
        Self::of(0.5)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `ln(1 + e^y)` without overflow.
pub fn softplus<F: Real>(y: F) -> F {
    if y > F::zero() {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}
