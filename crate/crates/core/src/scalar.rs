//! Scalar abstraction for the numeric kernels.
//!
//! Model math (n-gram probabilities, softmax classifiers, the dual encoder,
//! ROUGE) is generic over [`Real`]; the pipeline runs everything at `f64`
//! through the aliases at the crate root. `f32` instantiations are available
//! where callers can live with the looser tolerances.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the models are generic over.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + std::fmt::Debug
        + std::fmt::Display
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` constant or intermediate into `S`.
#[inline]
pub fn real<S: Real>(v: f64) -> S {
    S::from_f64(v).expect("f64 value representable in scalar type")
}
