use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

/// Real-number type the scoring math is written against.
///
/// Implemented for `f32` and `f64`; the model adapters and reports use `f64`.
pub trait Scalar: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {}
