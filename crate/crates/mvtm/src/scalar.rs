//! Scalar abstraction over the floating-point type used by the numeric core.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the library is generic over.
///
/// [`nalgebra::RealField`] supplies field arithmetic, transcendentals and
/// ordering; `FromPrimitive`/`ToPrimitive` bridge `f64` literals and I/O.
/// Implemented by `f32` and `f64`.
pub trait Real:
    nalgebra::RealField
    + FromPrimitive
    + ToPrimitive
    + Copy
    + Default
    + serde::Serialize
    + serde::de::DeserializeOwned
{
}

impl<T> Real for T where
    T: nalgebra::RealField
        + FromPrimitive
        + ToPrimitive
        + Copy
        + Default
        + serde::Serialize
        + serde::de::DeserializeOwned
{
}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal must be representable in the scalar type")
}

/// Converts the working scalar to `f64` for I/O and diagnostics.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar must be convertible to f64")
}
