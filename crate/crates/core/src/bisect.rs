//! Bracketing root finder for strictly monotone scalar maps.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

const MAX_ITER: usize = 400;
const MAX_EXPAND: usize = 200;

/// Root of a strictly decreasing `f` on `[lo, hi]` with `f(lo) >= 0 >= f(hi)`.
///
/// Stops once the bracket is narrower than `tol` or cannot be split any
/// further in the scalar type.
pub fn bisect_decreasing<T: Scalar>(f: impl Fn(T) -> T, mut lo: T, mut hi: T, tol: T) -> T {
    let two = lit::<T>(2.0);
    for _ in 0..MAX_ITER {
        let mid = lo + (hi - lo) / two;
        if hi - lo <= tol || mid <= lo || mid >= hi {
            return mid;
        }
        let v = f(mid);
        if v == T::zero() {
            return mid;
        }
        if v > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + (hi - lo) / two
}

/// Grows `[lo, hi]` geometrically until a strictly decreasing `f` changes
/// sign across it.
pub fn expand_decreasing<T: Scalar>(f: impl Fn(T) -> T, mut lo: T, mut hi: T) -> Result<(T, T)> {
    let two = lit::<T>(2.0);
    for _ in 0..MAX_EXPAND {
        let flo = f(lo);
        let fhi = f(hi);
        if flo.is_nan() || fhi.is_nan() {
            break;
        }
        if flo >= T::zero() && fhi <= T::zero() {
            return Ok((lo, hi));
        }
        let width = (hi - lo).max(T::one());
        if flo < T::zero() {
            lo = lo - width * two;
        }
        if fhi > T::zero() {
            hi = hi + width * two;
        }
    }
    Err(Error::resource("bracket expansion failed"))
}

/// Expands a bracket around `[lo, hi]`, then bisects.
pub fn solve_decreasing<T: Scalar>(f: impl Fn(T) -> T, lo: T, hi: T, tol: T) -> Result<T> {
    let (lo, hi) = expand_decreasing(&f, lo, hi)?;
    Ok(bisect_decreasing(f, lo, hi, tol))
}
