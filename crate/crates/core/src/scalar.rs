//! Floating-point abstraction shared by the mobility, cost and auction math.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used by the numeric modules: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite inputs with `f32`/`f64`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for [`Scalar::lit`].
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::lit(x)
}
