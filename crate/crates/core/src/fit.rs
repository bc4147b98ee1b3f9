//! Least-squares line fits shared by the estimators.

use crate::scalar::{lit, Scalar};

/// `(intercept, slope)` of the least-squares line through `(xs, ys)`;
/// `None` with fewer than two distinct abscissae.
pub fn linear_fit<T: Scalar>(xs: &[T], ys: &[T]) -> Option<(T, T)> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let nf = lit::<T>(n as f64);
    let mx = xs[..n].iter().copied().sum::<T>() / nf;
    let my = ys[..n].iter().copied().sum::<T>() / nf;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        sxy = sxy + (x - mx) * (y - my);
        sxx = sxx + (x - mx) * (x - mx);
    }
    if sxx <= T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Largest absolute deviation of the points from `intercept + slope·x`.
pub fn max_deviation<T: Scalar>(xs: &[T], ys: &[T], (intercept, slope): (T, T)) -> T {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| (y - intercept - slope * x).abs())
        .fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 - 2.0 * x).collect();
        let (a, b) = linear_fit(&xs, &ys).unwrap();
        assert!((a - 0.5).abs() < 1e-12 && (b + 2.0).abs() < 1e-12);
        assert!(max_deviation(&xs, &ys, (a, b)) < 1e-12);
    }

    #[test]
    fn degenerate_abscissae() {
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
        assert!(linear_fit::<f64>(&[1.0], &[0.0]).is_none());
    }
}
