//! Packing estimates of `Θ(q; r) = sup Σ μ(B(x_i, r))^q` and of the
//! L^q-spectrum `τ(q)` as a log-log slope, compared against `β(q)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{linear_fit, max_deviation};
use crate::format;
use crate::ifs::{IfsModel, NODE_CAP};
use crate::measure::mu_interval;
use crate::scalar::{lit, log_sum_exp, to_f64, Scalar};
use crate::spectrum::{beta, similarity_dimension};

/// Smallest ball measure admitted for negative `q`.
pub const MASS_FLOOR: f64 = 1e-300;
/// Ball measures are enclosed to `MEASURE_TOL · r^s`.
pub const MEASURE_TOL: f64 = 1e-4;
/// Refit without the two coarsest scales when the fit deviates by more.
pub const TRANSIENT_RESIDUAL: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThetaSample<T> {
    pub q: T,
    pub r: T,
    pub theta: T,
    pub ln_theta: T,
    pub balls_used: usize,
}

/// Centers of a greedy left-to-right maximal packing by disjoint closed
/// balls of radius `r`, drawn from the left endpoints of `Γ_r` cylinders.
pub fn packing_centers<T: Scalar>(model: &IfsModel<T>, r: T) -> Result<Vec<T>> {
    let mut candidates: Vec<T> = model
        .stopping_cylinders(r, NODE_CAP)?
        .into_iter()
        .map(|c| c.interval.lo)
        .collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite centers"));
    let gap = lit::<T>(2.0) * r * lit(1.0 + 1e-9);
    let mut picked: Vec<T> = Vec::new();
    for c in candidates {
        if picked.last().map_or(true, |&l| c - l > gap) {
            picked.push(c);
        }
    }
    Ok(picked)
}

pub fn theta<T: Scalar>(model: &IfsModel<T>, q: T, r: T) -> Result<ThetaSample<T>> {
    let hull = model.hull();
    if !(r > T::zero() && r < hull.len() / lit(4.0)) {
        return Err(Error::Domain(format!(
            "radius {} outside (0, hull length / 4)",
            to_f64(r)
        )));
    }
    if !q.is_finite() {
        return Err(Error::Domain("q must be finite".into()));
    }
    let centers = packing_centers(model, r)?;
    let ln_masses: Vec<T> = if q == T::zero() {
        vec![T::zero(); centers.len()]
    } else {
        let tol = lit::<T>(MEASURE_TOL) * r.powf(similarity_dimension(model)?);
        let floor = lit::<T>(MASS_FLOOR);
        centers
            .par_iter()
            .map(|&c| {
                let enc = mu_interval(model, (c - r).max(hull.lo), (c + r).min(hull.hi), tol)?;
                Ok(enc.mid())
            })
            .collect::<Result<Vec<T>>>()?
            .into_iter()
            .filter(|&m| q > T::zero() || m >= floor)
            .map(|m| m.ln())
            .collect()
    };
    if ln_masses.is_empty() {
        return Err(Error::Undefined(format!("no admissible balls at r = {}", to_f64(r))));
    }
    let ln_theta = log_sum_exp(ln_masses.iter().map(|&l| q * l));
    Ok(ThetaSample {
        q,
        r,
        theta: ln_theta.exp(),
        ln_theta,
        balls_used: ln_masses.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauEstimate<T> {
    pub q: T,
    pub tau_hat: T,
    pub beta_theory: T,
    /// Largest deviation of `ln Θ` from the fitted line.
    pub residual: T,
    /// Smallest ladder index kept in the fit.
    pub n_first: usize,
    /// Negative `q`: finite ladders are known to be biased.
    pub experimental: bool,
    pub samples: Vec<ThetaSample<T>>,
}

impl<T: Scalar> TauEstimate<T> {
    pub fn deviation(&self) -> T {
        (self.tau_hat - self.beta_theory).abs()
    }
}

/// Slope of `ln Θ(q; ρ^n)` against `−ln ρ^n` for `n ∈ [n_min, n_max]`.
pub fn tau_estimate<T: Scalar>(
    model: &IfsModel<T>,
    q: T,
    n_min: usize,
    n_max: usize,
    rho: T,
) -> Result<TauEstimate<T>> {
    if !(rho > T::zero() && rho < T::one()) {
        return Err(Error::Domain(format!("rho must lie in (0,1), got {}", to_f64(rho))));
    }
    if n_min < 1 || n_min >= n_max {
        return Err(Error::Domain(format!("need 1 ≤ n_min < n_max, got [{n_min}, {n_max}]")));
    }
    let samples = (n_min..=n_max)
        .into_par_iter()
        .map(|n| theta(model, q, rho.powi(n as i32)))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<T> = samples.iter().map(|s| -s.r.ln()).collect();
    let ys: Vec<T> = samples.iter().map(|s| s.ln_theta).collect();
    let fit_from = |skip: usize| {
        let line = linear_fit(&xs[skip..], &ys[skip..])
            .ok_or_else(|| Error::Undefined("regression needs two distinct scales".into()))?;
        Ok::<_, Error>((line, max_deviation(&xs[skip..], &ys[skip..], line)))
    };
    let mut skip = 0;
    let (mut line, mut residual) = fit_from(0)?;
    if residual > lit(TRANSIENT_RESIDUAL) && xs.len() >= 4 {
        skip = 2;
        (line, residual) = fit_from(skip)?;
    }
    Ok(TauEstimate {
        q,
        tau_hat: line.1,
        beta_theory: beta(model, q)?,
        residual,
        n_first: n_min + skip,
        experimental: q < T::zero(),
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BetaComparison<T> {
    pub estimates: Vec<TauEstimate<T>>,
    pub max_deviation: T,
}

pub fn compare_beta<T: Scalar>(
    model: &IfsModel<T>,
    q_grid: &[T],
    n_min: usize,
    n_max: usize,
    rho: T,
) -> Result<BetaComparison<T>> {
    let estimates = q_grid
        .par_iter()
        .map(|&q| tau_estimate(model, q, n_min, n_max, rho))
        .collect::<Result<Vec<_>>>()?;
    let max_deviation = estimates.iter().map(|e| e.deviation()).fold(T::zero(), T::max);
    Ok(BetaComparison {
        estimates,
        max_deviation,
    })
}

impl<T: Scalar> BetaComparison<T> {
    pub fn to_csv(&self) -> String {
        format::csv(
            "q,tau_hat,beta,residual",
            self.estimates.iter().map(|e| {
                [e.q, e.tau_hat, e.beta_theory, e.residual]
                    .iter()
                    .map(|&v| format::fmt_g(to_f64(v)))
                    .collect()
            }),
        )
    }

    pub fn samples_csv(&self) -> String {
        format::csv(
            "q,r,theta",
            self.estimates.iter().flat_map(|e| {
                e.samples.iter().map(|s| {
                    [s.q, s.r, s.theta]
                        .iter()
                        .map(|&v| format::fmt_g(to_f64(v)))
                        .collect()
                })
            }),
        )
    }
}
