//! The pressure function `β(q)`, its derivative spectrum `α(q)`, the
//! Legendre spectrum `β*(α)` and the dimension formulas for sets of
//! divergence points with a prescribed accumulation interval.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::ifs::IfsModel;
use crate::scalar::{lit, log_sum_exp, to_f64, Scalar};
use crate::bisect::{bisect_decreasing, solve_decreasing};

/// Largest `|q|` accepted by [`beta`].
pub const BETA_Q_CAP: f64 = 200.0;
/// `q` range searched by [`legendre`]; targets beyond `α(±cap)` are clamped.
pub const LEGENDRE_Q_CAP: f64 = 50.0;
/// `α_max − α_min` below this marks the model as degenerate (`p_i = r_i^s`).
pub const DEGENERACY_TOL: f64 = 1e-9;
/// Points in the grid pre-scan of [`divergence_dimensions`].
pub const PRESCAN_POINTS: usize = 1024;

const ROOT_TOL: f64 = 1e-15;
const RANGE_SLACK: f64 = 1e-12;

/// Solves `Σ p_i^q r_i^β = 1` for `β`.
pub fn beta<T: Scalar>(model: &IfsModel<T>, q: T) -> Result<T> {
    if !q.is_finite() || q.abs() > lit(BETA_Q_CAP) {
        return Err(Error::Domain(format!(
            "|q| must not exceed {BETA_Q_CAP}, got {}",
            to_f64(q)
        )));
    }
    let lp = model.ln_probs();
    let lr = model.ln_ratios();
    // ln Σ exp(q ln p_i + b ln r_i) is strictly decreasing in b.
    let pressure = |b: T| log_sum_exp(lp.iter().zip(lr).map(|(&p, &r)| q * p + b * r));
    let min_lr = lr.iter().map(|x| x.abs()).fold(T::infinity(), T::min);
    let max_lp = lp.iter().map(|x| x.abs()).fold(T::zero(), T::max);
    let slope = max_lp / min_lr;
    let s_bound = lit::<T>(model.len() as f64).ln() / min_lr;
    let lo = -(q.abs() * slope) - T::one();
    let hi = q.abs() * slope + s_bound + T::one();
    solve_decreasing(pressure, lo, hi, lit(ROOT_TOL))
}

/// Gibbs weights `w_i = p_i^q r_i^{β(q)}`; they sum to one.
pub fn gibbs_weights<T: Scalar>(model: &IfsModel<T>, q: T, beta_q: T) -> Vec<T> {
    model
        .ln_probs()
        .iter()
        .zip(model.ln_ratios())
        .map(|(&p, &r)| (q * p + beta_q * r).exp())
        .collect()
}

/// `α(q) = −β′(q) = Σ w_i ln p_i / Σ w_i ln r_i`.
pub fn alpha<T: Scalar>(model: &IfsModel<T>, q: T) -> Result<T> {
    let b = beta(model, q)?;
    Ok(alpha_from_weights(model, &gibbs_weights(model, q, b)))
}

/// Exponent ratio `Σ ν_i ln p_i / Σ ν_i ln r_i` of a digit distribution.
pub fn alpha_from_weights<T: Scalar>(model: &IfsModel<T>, w: &[T]) -> T {
    let num: T = w.iter().zip(model.ln_probs()).map(|(&w, &p)| w * p).sum();
    let den: T = w.iter().zip(model.ln_ratios()).map(|(&w, &r)| w * r).sum();
    num / den
}

/// `(α_min, α_max)`, the extremes of `ln p_i / ln r_i`.
pub fn alpha_range<T: Scalar>(model: &IfsModel<T>) -> (T, T) {
    model
        .ln_probs()
        .iter()
        .zip(model.ln_ratios())
        .map(|(&p, &r)| p / r)
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), a| {
            (lo.min(a), hi.max(a))
        })
}

/// True when `p_i = r_i^s` for all `i`, i.e. the spectrum is a single point.
pub fn is_degenerate<T: Scalar>(model: &IfsModel<T>) -> bool {
    let (lo, hi) = alpha_range(model);
    hi - lo < lit(DEGENERACY_TOL)
}

/// Similarity dimension `s = β(0)`.
pub fn similarity_dimension<T: Scalar>(model: &IfsModel<T>) -> Result<T> {
    beta(model, T::zero())
}

/// One value of the Legendre spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LegendrePoint<T> {
    pub alpha: T,
    pub fstar: T,
    /// `q` at which `α(q) = alpha`.
    pub q: T,
    /// Set when the target lies beyond `α(±q_cap)` and `q` was clamped; the
    /// value is then an upper approximation of the endpoint limit.
    pub clamped: bool,
}

/// `β*(α) = inf_q (qα + β(q))`, evaluated at the `q` solving `α(q) = α`.
pub fn legendre<T: Scalar>(model: &IfsModel<T>, alpha_target: T) -> Result<LegendrePoint<T>> {
    let (amin, amax) = alpha_range(model);
    let slack = lit::<T>(RANGE_SLACK);
    if !alpha_target.is_finite() || alpha_target < amin - slack || alpha_target > amax + slack {
        return Err(Error::Domain(format!(
            "alpha {} outside [{}, {}]",
            to_f64(alpha_target),
            to_f64(amin),
            to_f64(amax)
        )));
    }
    if is_degenerate(model) {
        let s = similarity_dimension(model)?;
        return Ok(LegendrePoint {
            alpha: alpha_target,
            fstar: s,
            q: T::zero(),
            clamped: false,
        });
    }
    let cap = lit::<T>(LEGENDRE_Q_CAP);
    let (q, clamped) = if alpha_target >= alpha(model, -cap)? {
        (-cap, true)
    } else if alpha_target <= alpha(model, cap)? {
        (cap, true)
    } else {
        let h = |q: T| alpha(model, q).map(|a| a - alpha_target).unwrap_or(T::nan());
        (bisect_decreasing(h, -cap, cap, lit(ROOT_TOL)), false)
    };
    Ok(LegendrePoint {
        alpha: alpha_target,
        fstar: q * alpha_target + beta(model, q)?,
        q,
        clamped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    /// No point has exactly this accumulation set.
    Empty,
    Valid,
}

/// Dimensions of `K_I = {x : A(D(x)) = I}` and `K^I = {x : A(D(x)) ⊆ I}`.
///
/// `None` stands for the empty set.
#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport<T> {
    pub interval_in: [T; 2],
    pub clipped: Option<[T; 2]>,
    pub classification: Classification,
    pub dim_P_equal: Option<T>,
    pub dim_P_subset: Option<T>,
    pub dim_H_equal: Option<T>,
    pub dim_H_subset: Option<T>,
    /// Point of the clipped interval where `β*` attains its supremum.
    pub alpha_at_sup: Option<T>,
    /// Set when an endpoint value of `β*` came from a clamped `q`.
    pub endpoint_approximation: bool,
}

impl<T: Scalar + Serialize> DimensionReport<T> {
    pub fn to_json(&self) -> String {
        format::to_json(self)
    }
}

/// Supremum, its location, and infimum of `β*` over `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumExtremes<T> {
    pub sup: T,
    pub argsup: T,
    pub inf: T,
    pub approximate: bool,
}

/// Extremes of the concave `β*` over `[lo, hi] ⊆ [α_min, α_max]`.
///
/// The peak sits at `α(0)`, so the supremum is at the projection of `α(0)`
/// onto the interval and the infimum at an endpoint. A grid pre-scan guards
/// both against loss of concavity from rounding.
pub fn spectrum_extremes<T: Scalar>(model: &IfsModel<T>, lo: T, hi: T) -> Result<SpectrumExtremes<T>> {
    if is_degenerate(model) {
        let s = similarity_dimension(model)?;
        return Ok(SpectrumExtremes {
            sup: s,
            argsup: s,
            inf: s,
            approximate: false,
        });
    }
    let a0 = alpha(model, T::zero())?;
    let argsup = a0.max(lo).min(hi);
    let peak = legendre(model, argsup)?;
    let left = legendre(model, lo)?;
    let right = legendre(model, hi)?;
    let mut out = SpectrumExtremes {
        sup: peak.fstar,
        argsup,
        inf: left.fstar.min(right.fstar),
        approximate: peak.clamped || left.clamped || right.clamped,
    };
    if hi > lo {
        let n = PRESCAN_POINTS;
        let step = (hi - lo) / lit((n - 1) as f64);
        let mut best = (out.sup, argsup);
        for k in 0..n {
            let a = if k + 1 == n { hi } else { lo + step * lit(k as f64) };
            let f = legendre(model, a)?.fstar;
            if f > best.0 {
                best = (f, a);
            }
            out.inf = out.inf.min(f);
        }
        if best.0 > out.sup + lit(1e-10) {
            let (a, f) = golden_max(model, (best.1 - step).max(lo), (best.1 + step).min(hi))?;
            if f > out.sup {
                out.sup = f;
                out.argsup = a;
            }
        }
    }
    Ok(out)
}

fn golden_max<T: Scalar>(model: &IfsModel<T>, mut a: T, mut b: T) -> Result<(T, T)> {
    let g = lit::<T>((5f64.sqrt() - 1.0) / 2.0);
    let f = |x: T| legendre(model, x).map(|p| p.fstar);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > lit(1e-10) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let x = (a + b) / lit(2.0);
    Ok((x, f(x)?))
}

/// Classifies `I = [a, b]` and reports the packing and Hausdorff dimensions
/// of `K_I` and `K^I`.
pub fn divergence_dimensions<T: Scalar>(model: &IfsModel<T>, a: T, b: T) -> Result<DimensionReport<T>> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(Error::Malformed(format!(
            "interval [{}, {}] is not a closed interval",
            to_f64(a),
            to_f64(b)
        )));
    }
    let (amin, amax) = alpha_range(model);
    let slack = lit::<T>(RANGE_SLACK);
    let inside = a >= amin - slack && b <= amax + slack;
    let (clo, chi) = (a.max(amin), b.min(amax));
    let clipped = if clo <= chi {
        Some([clo, chi])
    } else if inside {
        // Rounding can push a singleton just past the range.
        Some([a.max(amin).min(amax), a.max(amin).min(amax)])
    } else {
        None
    };
    let classification = if inside {
        Classification::Valid
    } else {
        Classification::Empty
    };
    let mut report = DimensionReport {
        interval_in: [a, b],
        clipped,
        classification,
        dim_P_equal: None,
        dim_P_subset: None,
        dim_H_equal: None,
        dim_H_subset: None,
        alpha_at_sup: None,
        endpoint_approximation: false,
    };
    if let Some([lo, hi]) = clipped {
        let ext = spectrum_extremes(model, lo, hi)?;
        report.dim_P_subset = Some(ext.sup);
        report.dim_H_subset = Some(ext.sup);
        report.alpha_at_sup = Some(ext.argsup);
        report.endpoint_approximation = ext.approximate;
        if inside {
            report.dim_P_equal = Some(ext.sup);
            report.dim_H_equal = Some(ext.inf);
        }
    }
    Ok(report)
}

/// `(q, β(q), α(q), β*(α(q)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint<T> {
    pub q: T,
    pub beta: T,
    pub alpha: T,
    pub fstar: T,
}

impl<T: Scalar> SpectrumPoint<T> {
    pub fn at(model: &IfsModel<T>, q: T) -> Result<Self> {
        let b = beta(model, q)?;
        let a = alpha_from_weights(model, &gibbs_weights(model, q, b));
        Ok(Self {
            q,
            beta: b,
            alpha: a,
            fstar: q * a + b,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable<T> {
    pub rows: Vec<SpectrumPoint<T>>,
    pub fingerprint: String,
}

/// Tabulates the spectrum at `steps` evenly spaced `q` in `[q_min, q_max]`.
///
/// Rows are computed independently, possibly in parallel.
pub fn spectrum_table<T: Scalar>(model: &IfsModel<T>, q_min: T, q_max: T, steps: usize) -> Result<SpectrumTable<T>> {
    if !(q_min < q_max) || steps < 2 {
        return Err(Error::Malformed(format!(
            "need q_min < q_max and steps >= 2, got [{}, {}] with {steps}",
            to_f64(q_min),
            to_f64(q_max)
        )));
    }
    let span = q_max - q_min;
    let denom = lit::<T>((steps - 1) as f64);
    let rows = (0..steps)
        .into_par_iter()
        .map(|k| SpectrumPoint::at(model, q_min + span * lit(k as f64) / denom))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumTable {
        rows,
        fingerprint: model.fingerprint(),
    })
}

impl<T: Scalar + Serialize> SpectrumTable<T> {
    pub fn to_csv(&self) -> String {
        format::csv(
            "q,beta,alpha,fstar",
            self.rows.iter().map(|r| {
                [r.q, r.beta, r.alpha, r.fstar]
                    .iter()
                    .map(|&x| format::fmt_g(to_f64(x)))
                    .collect()
            }),
        )
    }

    pub fn to_json(&self) -> String {
        format::to_json(self)
    }
}
