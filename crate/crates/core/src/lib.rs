//! Joint survival of two critical branching populations driven by one shared
//! random environment.
//!
//! The probability that both populations are alive at generation `n` decays
//! like `n^{-theta(rho)}` with `theta(rho) = pi / (2 arccos(-rho))`. The crate
//! computes that probability exactly per environment (geometric offspring),
//! averages it over environments, and checks the exponent against the
//! exit-time tail of the associated two-dimensional walk from the positive
//! quadrant. Around it sit the conditioned-walk tools: the harmonic function
//! of the killed walk, a Doob h-transform particle sampler, entropic
//! repulsion diagnostics and meander self-consistency checks.
//!
//! The closed-form math is generic over [`scalar::Real`]; the aliases below
//! fix it to `f64` for the samplers.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod branching;
pub mod curve;
pub mod env;
pub mod error;
pub mod estimators;
pub mod harmonic;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod walk;

pub use curve::{CurveKind, CurveRow, SurvivalCurve};
pub use env::{EnvFamily, EnvModelSpec, RhoParam};
pub use error::{Error, Result};
pub use rng::Streams;

pub type Vec2 = walk::Point2<f64>;
pub type ConeGeometry = walk::Cone<f64>;
pub type QuenchedAccumulator = branching::Quenched<f64>;

pub type Vec2F32 = walk::Point2<f32>;
pub type ConeGeometryF32 = walk::Cone<f32>;
pub type QuenchedAccumulatorF32 = branching::Quenched<f32>;
