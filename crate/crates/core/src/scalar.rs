use std::fmt::{Debug, Display};

/// Floating point scalar the engine is generic over (f32 or f64).
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumCast
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an f64 literal.
    fn lit(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 literal representable in scalar")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
