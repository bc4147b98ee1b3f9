//! Certified evaluation of the self-similar measure on intervals of the line
//! and traces of `D_r(x) = log μ(B(x,r)) / log r`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format;
use crate::ifs::{Affine, IfsModel, Interval};
use crate::scalar::{lit, to_f64, Scalar};

/// Refinement depth allowed beyond the level at which cylinders reach the
/// scale of the query.
pub const DEPTH_CAP: usize = 60;

/// `lo ≤ μ([a,b]) ≤ hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeasureEnclosure<T> {
    pub lo: T,
    pub hi: T,
    pub depth_used: usize,
}

impl<T: Scalar> MeasureEnclosure<T> {
    pub fn mid(&self) -> T {
        (self.lo + self.hi) / lit(2.0)
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }
}

/// Encloses `μ([a, b])` to within `tol` using `μ = Σ p_i μ∘S_i^{-1}`.
///
/// Cylinders inside `[a, b]` count fully, disjoint ones not at all, and the
/// remaining (straddling) ones are refined until their total mass is at most
/// `tol`.
pub fn mu_interval<T: Scalar>(model: &IfsModel<T>, a: T, b: T, tol: T) -> Result<MeasureEnclosure<T>> {
    mu_interval_capped(model, a, b, tol, DEPTH_CAP)
}

pub fn mu_interval_capped<T: Scalar>(
    model: &IfsModel<T>,
    a: T,
    b: T,
    tol: T,
    depth_cap: usize,
) -> Result<MeasureEnclosure<T>> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(Error::Malformed(format!("[{}, {}] is not an interval", to_f64(a), to_f64(b))));
    }
    if !(tol > T::zero()) {
        return Err(Error::Domain(format!("tolerance must be positive, got {}", to_f64(tol))));
    }
    let target = Interval::new(a, b);
    let hull = model.hull();
    let mut decided = T::zero();
    let mut frontier: Vec<(Affine<T>, T)> = Vec::new();
    classify(&target, hull, Affine::identity(), T::one(), &mut decided, &mut frontier);
    let mut depth = 0;
    loop {
        let straddle: T = frontier.iter().map(|&(_, p)| p).sum();
        if straddle <= tol {
            return Ok(MeasureEnclosure {
                lo: decided.min(T::one()),
                hi: (decided + straddle).min(T::one()),
                depth_used: depth,
            });
        }
        if depth >= depth_cap {
            return Err(Error::Resource {
                what: format!("measure enclosure not within {} after depth {depth}", to_f64(tol)),
                enclosure: Some((to_f64(decided), to_f64(decided + straddle))),
            });
        }
        depth += 1;
        let mut next = Vec::with_capacity(frontier.len() * model.len());
        for (acc, p) in frontier {
            for (m, &pi) in model.maps().iter().zip(model.probs()) {
                classify(&target, hull, acc.then(m), p * pi, &mut decided, &mut next);
            }
        }
        frontier = next;
    }
}

fn classify<T: Scalar>(
    target: &Interval<T>,
    hull: Interval<T>,
    acc: Affine<T>,
    p: T,
    decided: &mut T,
    frontier: &mut Vec<(Affine<T>, T)>,
) {
    let iv = acc.image(hull);
    if target.contains_interval(&iv) {
        *decided = *decided + p;
    } else if iv.hi >= target.lo && iv.lo <= target.hi {
        frontier.push((acc, p));
    }
}

/// Depth cap for a query at scale `r`: `DEPTH_CAP` levels past the level
/// where cylinders shrink below `r`.
fn depth_cap_for<T: Scalar>(model: &IfsModel<T>, r: T) -> usize {
    let extra = (r.min(T::one()).ln() / model.r_max().ln()).ceil();
    DEPTH_CAP + to_f64(extra).max(0.0) as usize
}

/// `μ(B(center, radius))` with the ball clipped to the hull, refined until
/// the enclosure width is below `rel_tol` times its lower bound.
pub fn mu_ball_relative<T: Scalar>(
    model: &IfsModel<T>,
    center: T,
    radius: T,
    rel_tol: T,
) -> Result<MeasureEnclosure<T>> {
    let hull = model.hull();
    let slack = T::rel_slack() * hull.len();
    let snap = |v: T| {
        if (v - hull.lo).abs() <= slack {
            hull.lo
        } else if (v - hull.hi).abs() <= slack {
            hull.hi
        } else {
            v
        }
    };
    let a = snap((center - radius).max(hull.lo));
    let b = snap((center + radius).min(hull.hi));
    let cap = depth_cap_for(model, radius / hull.len());
    let mut tol = rel_tol * radius.min(T::one());
    for _ in 0..40 {
        let enc = mu_interval_capped(model, a, b, tol, cap)?;
        if enc.hi <= T::zero() || enc.width() <= rel_tol * enc.lo {
            return Ok(enc);
        }
        tol = if enc.lo > T::zero() {
            (rel_tol * enc.lo / lit(2.0)).min(tol / lit(2.0))
        } else {
            tol / lit(1e3)
        };
    }
    Err(Error::resource("relative measure tolerance not reached"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow<T> {
    pub n: usize,
    pub r: T,
    pub mu: T,
    /// `ln μ / ln r`; `None` when the ball carries no mass.
    pub dim: Option<T>,
    pub ln_r: T,
    pub ln_mu: T,
}

impl<T: Scalar> TraceRow<T> {
    pub fn off_support(&self) -> bool {
        self.dim.is_none()
    }
}

/// `D_{ρ^n}(x)` for `n = 1..=n_max`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalDimTrace<T> {
    pub x: T,
    pub rho: T,
    pub rows: Vec<TraceRow<T>>,
}

fn check_ladder<T: Scalar>(rho: T, n_max: usize) -> Result<()> {
    if !(rho > T::zero() && rho < T::one()) {
        return Err(Error::Domain(format!("rho must lie in (0,1), got {}", to_f64(rho))));
    }
    if n_max < 1 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    Ok(())
}

fn make_row<T: Scalar>(n: usize, ln_r: T, ln_mu: T) -> TraceRow<T> {
    let dim = (ln_mu > T::neg_infinity()).then(|| ln_mu / ln_r);
    TraceRow {
        n,
        r: ln_r.exp(),
        mu: ln_mu.exp(),
        dim,
        ln_r,
        ln_mu,
    }
}

/// Local dimension trace at a point given by its coordinate.
///
/// Row `n` uses the midpoint of the enclosure of `μ([x − ρ^n, x + ρ^n])`
/// computed with absolute tolerance `tol·ρ^n`.
pub fn local_dim_trace<T: Scalar>(
    model: &IfsModel<T>,
    x: T,
    rho: T,
    n_max: usize,
    tol: T,
) -> Result<LocalDimTrace<T>> {
    check_ladder(rho, n_max)?;
    let hull = model.hull();
    let slack = T::rel_slack() * hull.len();
    if !(x >= hull.lo - slack && x <= hull.hi + slack) {
        return Err(Error::Domain(format!("x = {} lies outside the hull", to_f64(x))));
    }
    let x = x.max(hull.lo).min(hull.hi);
    let rows = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let r = rho.powi(n as i32);
            let cap = depth_cap_for(model, r / hull.len());
            let enc = mu_interval_capped(model, (x - r).max(hull.lo), (x + r).min(hull.hi), tol * r, cap)?;
            let mu = enc.mid();
            let ln_mu = if enc.hi > T::zero() { mu.ln() } else { T::neg_infinity() };
            Ok(make_row(n, lit::<T>(n as f64) * rho.ln(), ln_mu))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalDimTrace { x, rho, rows })
}

/// Digits consumed when locating a point from its coding.
const POINT_DIGITS: usize = 64;

/// Local dimension trace at the point coded by `digits` (1-based), valid for
/// scales far below floating point resolution of the coordinate.
///
/// For each scale the ball is pulled back through the deepest cylinder
/// `S_u(hull)` that contains it, using `μ(A) = p_u μ(S_u^{-1} A)` for
/// `A ⊆ S_u(hull)`, which holds when first-level images of the hull have
/// disjoint interiors. `tol` is the relative accuracy of each ball measure.
pub fn local_dim_trace_symbolic<T: Scalar>(
    model: &IfsModel<T>,
    digits: &[usize],
    rho: T,
    n_max: usize,
    tol: T,
) -> Result<LocalDimTrace<T>> {
    check_ladder(rho, n_max)?;
    let idx: Vec<usize> = digits
        .iter()
        .map(|&d| {
            if d == 0 || d > model.len() {
                Err(Error::Malformed(format!("digit {d} outside [1, {}]", model.len())))
            } else {
                Ok(d - 1)
            }
        })
        .collect::<Result<_>>()?;
    let hull = model.hull();
    let ln_rho = rho.ln();
    // Prefix sums of ln r and ln p along the coding.
    let mut ln_r_pref = vec![T::zero(); idx.len() + 1];
    let mut ln_p_pref = vec![T::zero(); idx.len() + 1];
    for (k, &i) in idx.iter().enumerate() {
        ln_r_pref[k + 1] = ln_r_pref[k] + model.ln_ratios()[i];
        ln_p_pref[k + 1] = ln_p_pref[k] + model.ln_probs()[i];
    }
    let point_of_tail = |k: usize| -> (T, T) {
        let end = (k + POINT_DIGITS).min(idx.len());
        let y = idx[k..end]
            .iter()
            .rev()
            .fold(hull.lo, |y, &i| model.maps()[i].apply(y));
        // Width of the cylinder the point is only known to lie in.
        let spread = (ln_r_pref[end] - ln_r_pref[k]).exp() * hull.len();
        (y, spread)
    };
    let x = point_of_tail(0).0;
    let mut k = 0usize;
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let ln_r = lit::<T>(n as f64) * ln_rho;
        // Deepest prefix whose cylinder contains the ball; non-decreasing in n.
        // The step through digit i is allowed when the pulled-back ball misses
        // the interior of every sibling image S_j(hull).
        while k < idx.len() {
            let (y, _) = point_of_tail(k);
            let radius = (ln_r - ln_r_pref[k]).exp();
            let clear = model.maps().iter().enumerate().all(|(j, m)| {
                let iv = m.image(hull);
                j == idx[k] || iv.hi <= y - radius || iv.lo >= y + radius
            });
            if !clear {
                break;
            }
            k += 1;
        }
        let (y, spread) = point_of_tail(k);
        let radius = (ln_r - ln_r_pref[k]).exp();
        if spread > radius * lit(1e-9) {
            return Err(Error::Domain(format!(
                "coding of {} digits too short to resolve scale n = {n}",
                digits.len()
            )));
        }
        let enc = mu_ball_relative(model, y, radius, tol)?;
        let ln_mu = if enc.hi > T::zero() {
            ln_p_pref[k] + enc.mid().ln()
        } else {
            T::neg_infinity()
        };
        rows.push(make_row(n, ln_r, ln_mu));
    }
    Ok(LocalDimTrace { x, rho, rows })
}

/// `(min, max)` of `D` over rows with `n ≥ tail_start`, a finite stand-in
/// for the hull of the accumulation set `A(D(x))`.
pub fn accumulation_estimate<T: Scalar>(trace: &LocalDimTrace<T>, tail_start: usize) -> Result<(T, T)> {
    if trace.rows.last().map_or(true, |r| tail_start > r.n) {
        return Err(Error::Domain(format!(
            "tail start {tail_start} beyond the last row of the trace"
        )));
    }
    trace
        .rows
        .iter()
        .filter(|r| r.n >= tail_start)
        .filter_map(|r| r.dim)
        .fold(None, |acc: Option<(T, T)>, d| {
            Some(acc.map_or((d, d), |(lo, hi)| (lo.min(d), hi.max(d))))
        })
        .ok_or_else(|| Error::Undefined("every tail row is off the support".into()))
}

impl<T: Scalar> LocalDimTrace<T> {
    pub fn to_csv(&self) -> String {
        format::csv(
            "n,r,mu,D",
            self.rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    format::fmt_g(to_f64(r.r)),
                    format::fmt_g(to_f64(r.mu)),
                    format::fmt_g(r.dim.map_or(f64::NAN, to_f64)),
                ]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::Word;

    fn cantor() -> IfsModel<f64> {
        IfsModel::from_parts(&[1.0 / 3.0, 1.0 / 3.0], &[0.0, 2.0 / 3.0], &[0.3, 0.7]).unwrap()
    }

    const D_LEFT: f64 = 1.095903274289384638; // ln 0.3 / ln(1/3)
    const D_RIGHT: f64 = 0.324659525127962402; // ln 0.7 / ln(1/3)

    #[test]
    fn full_and_first_cylinder() {
        let m = cantor();
        let e = mu_interval(&m, 0.0, 1.0, 1e-9).unwrap();
        assert_eq!((e.lo, e.hi), (1.0, 1.0));
        let e = mu_interval(&m, 0.0, 1.0 / 3.0, 1e-9).unwrap();
        assert!((e.lo - 0.3).abs() < 1e-12 && e.width() <= 1e-9);
        let e = mu_interval(&m, 0.0, 0.5, 1e-6).unwrap();
        assert!((e.mid() - 0.3).abs() <= 1e-6);
    }

    #[test]
    fn straddling_mass_bounds_width() {
        let m = cantor();
        let e = mu_interval(&m, 0.1, 0.85, 1e-7).unwrap();
        assert!(e.width() <= 1e-7 && e.lo <= e.hi);
        // [0.1, 0.85] ∩ K: tail of cylinder 1 past 0.1 plus cylinders 21 and most of 22.
        let inner = mu_interval(&m, 0.1, 1.0 / 3.0, 1e-9).unwrap().mid()
            + mu_interval(&m, 2.0 / 3.0, 0.85, 1e-9).unwrap().mid();
        assert!((e.mid() - inner).abs() < 2e-7);
    }

    #[test]
    fn depth_cap_reports_best_enclosure() {
        let m = cantor();
        match mu_interval_capped(&m, 0.1, 0.9, 1e-12, 3) {
            Err(Error::Resource { enclosure: Some((lo, hi)), .. }) => assert!(lo <= hi),
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        let m = cantor();
        assert!(matches!(mu_interval(&m, 0.5, 0.4, 1e-6), Err(Error::Malformed(_))));
        assert!(matches!(mu_interval(&m, 0.1, 0.4, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cylinder_measures_agree() {
        let m = cantor();
        for digits in [vec![1, 2], vec![2, 1, 1], vec![2, 2, 1, 2]] {
            let c = m.cylinder(&Word::new(digits)).unwrap();
            let e = mu_interval(&m, c.interval.lo, c.interval.hi, 1e-10).unwrap();
            assert!((e.mid() - c.p_u).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_traces_are_constant() {
        let m = cantor();
        let t = local_dim_trace(&m, 0.0, 1.0 / 3.0, 12, 1e-6).unwrap();
        for r in &t.rows {
            assert!((r.dim.unwrap() - D_LEFT).abs() < 1e-6, "{r:?}");
        }
        let (lo, hi) = accumulation_estimate(&t, 3).unwrap();
        assert!((lo - D_LEFT).abs() < 1e-6 && (hi - D_LEFT).abs() < 1e-6);
        let t = local_dim_trace(&m, 1.0, 1.0 / 3.0, 12, 1e-6).unwrap();
        for r in &t.rows {
            assert!((r.dim.unwrap() - D_RIGHT).abs() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn gap_point_is_off_support() {
        let m = cantor();
        let t = local_dim_trace(&m, 0.5, 1.0 / 3.0, 6, 1e-6).unwrap();
        // B(1/2, 1/3) still reaches into both first-level cylinders.
        assert!(!t.rows[0].off_support());
        assert!(t.rows[1..].iter().all(|r| r.off_support() && r.mu == 0.0));
        assert!(matches!(accumulation_estimate(&t, 2), Err(Error::Undefined(_))));
        assert!(matches!(accumulation_estimate(&t, 7), Err(Error::Domain(_))));
    }

    #[test]
    fn symbolic_trace_matches_coordinate_trace() {
        let m = cantor();
        let digits: Vec<usize> = (0..200).map(|k| if k % 3 == 0 { 1 } else { 2 }).collect();
        let sym = local_dim_trace_symbolic(&m, &digits, 1.0 / 3.0, 25, 1e-8).unwrap();
        let x = sym.x;
        let direct = local_dim_trace(&m, x, 1.0 / 3.0, 25, 1e-8).unwrap();
        for (a, b) in sym.rows.iter().zip(&direct.rows) {
            assert!((a.dim.unwrap() - b.dim.unwrap()).abs() < 1e-6, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn symbolic_trace_goes_deep() {
        let m = cantor();
        let t = local_dim_trace_symbolic(&m, &vec![1; 700], 1.0 / 3.0, 600, 1e-6).unwrap();
        for r in &t.rows {
            assert!((r.dim.unwrap() - D_LEFT).abs() < 1e-6, "{r:?}");
        }
        assert!(local_dim_trace_symbolic(&m, &[1, 2, 1], 1.0 / 3.0, 10, 1e-6).is_err());
    }

    #[test]
    fn trace_csv_header() {
        let m = cantor();
        let t = local_dim_trace(&m, 0.0, 1.0 / 3.0, 2, 1e-6).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("n,r,mu,D\n1,0.333333333333,0.3,1.09590327429\n"));
    }

    mod properties {
        use proptest::prelude::*;

        use super::*;
        use crate::ifs::testing::arb_model;

        const TOL: f64 = 1e-6;

        fn mu(m: &IfsModel<f64>, a: f64, b: f64) -> MeasureEnclosure<f64> {
            mu_interval(m, a, b, TOL).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn self_similar_images(m in arb_model(), a in 0.0f64..1.0, w in 0.0f64..1.0, pick in 0usize..5) {
                let i = pick % m.len();
                let b = a + w * (1.0 - a);
                let map = m.maps()[i];
                let whole = mu(&m, a, b).mid();
                let image = mu(&m, map.apply(a), map.apply(b)).mid();
                prop_assert!((image - m.probs()[i] * whole).abs() <= 3.0 * TOL);
            }

            #[test]
            fn nested_intervals_are_monotone(m in arb_model(), a in 0.0f64..0.5, w in 0.0f64..0.5, grow in 0.0f64..0.2) {
                let inner = mu(&m, a, a + w);
                let outer = mu(&m, (a - grow).max(0.0), a + w + grow);
                prop_assert!(inner.lo <= outer.hi + 1e-15);
            }

            #[test]
            fn first_level_cylinders_sum_to_one(m in arb_model()) {
                let total: f64 = (1..=m.len())
                    .map(|d| {
                        let c = m.cylinder(&Word::new(vec![d])).unwrap();
                        mu(&m, c.interval.lo, c.interval.hi).mid()
                    })
                    .sum();
                prop_assert!((total - 1.0).abs() <= 2.0 * TOL);
            }

            #[test]
            fn cylinder_mass_is_p_u(m in arb_model(), digits in proptest::collection::vec(1usize..=5, 1..5)) {
                let digits: Vec<usize> = digits.into_iter().map(|d| (d - 1) % m.len() + 1).collect();
                let c = m.cylinder(&Word::new(digits)).unwrap();
                let e = mu(&m, c.interval.lo, c.interval.hi);
                prop_assert!((e.mid() - c.p_u).abs() <= TOL, "{:?} vs {}", e, c.p_u);
            }
        }
    }
}
