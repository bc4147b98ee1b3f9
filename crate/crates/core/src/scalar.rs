//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the analysis can run on: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Serialize + DeserializeOwned + Send + Sync + 'static
{
    /// Tolerance on `Σ p_i = 1`.
    fn prob_tol() -> Self {
        let floor = Self::epsilon() * lit(64.0);
        lit::<Self>(1e-12).max(floor)
    }

    /// Relative slack used when comparing quantities that are equal in exact
    /// arithmetic but may differ by rounding (scales, endpoints).
    fn rel_slack() -> Self {
        let floor = Self::epsilon() * lit(1024.0);
        lit::<Self>(1e-12).max(floor)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Lossy conversion to `f64` for reporting.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `ln Σ exp(x_i)` without overflow.
pub fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<T>().ln()
}
