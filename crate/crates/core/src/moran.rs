//! Packing dimension of homogeneous Moran structures, `dim_P F = limsup s_k`
//! with `Σ_{ω ∈ D_k} r_ω^{s_k} = 1`.
//!
//! Levels are stored as runs of identical levels so that structures with
//! astronomically many levels (those derived from divergence schedules) stay
//! cheap. Ratios and branch multiplicities are kept as logarithms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bisect::solve_decreasing;
use crate::divergence::{fill_counts, BlockSchedule};
use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::format;
use crate::ifs::IfsModel;
use crate::scalar::{lit, log_sum_exp, to_f64, Scalar};

pub const ROOT_TOL: f64 = 1e-13;
/// Digits per type-class level in `from_schedule`.
pub const TYPE_CLASS_LEN: u128 = 256;
/// Relative drop of the fitted `ratio_log` over the second half of the
/// levels that counts as a downward trend.
pub const TREND_DROP: f64 = 0.05;
/// `ratio_log` below this passes outright.
pub const TREND_FLOOR: f64 = 1e-6;

/// `mult` children with contraction ratio `exp(ln_ratio)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Branch<T> {
    pub ln_ratio: T,
    pub ln_mult: T,
}

/// `times` consecutive identical levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Run<T> {
    pub branches: Vec<Branch<T>>,
    pub times: u128,
}

impl<T: Scalar> Run<T> {
    /// `ln Σ_j mult_j c_j^s`.
    fn level_pressure(&self, s: T) -> T {
        log_sum_exp(self.branches.iter().map(|b| b.ln_mult + s * b.ln_ratio))
    }

    fn ln_min_ratio(&self) -> T {
        self.branches.iter().fold(T::infinity(), |m, b| m.min(b.ln_ratio))
    }

    fn ln_max_ratio(&self) -> T {
        self.branches.iter().fold(T::neg_infinity(), |m, b| m.max(b.ln_ratio))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MoranSpec<T> {
    runs: Vec<Run<T>>,
    /// Set when the structure stands in for something it only approximates.
    pub approximate: bool,
    pub note: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDto {
    ratios: Option<Vec<f64>>,
    ln_ratios: Option<Vec<f64>>,
    multiplicities: Option<Vec<f64>>,
    ln_multiplicities: Option<Vec<f64>>,
    times: u128,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDto {
    #[serde(default)]
    levels: Vec<Vec<f64>>,
    #[serde(default)]
    repeat: Vec<RunDto>,
    #[serde(default)]
    approximate: bool,
    note: Option<String>,
}

#[derive(Serialize)]
struct RunOut {
    ln_ratios: Vec<f64>,
    ln_multiplicities: Vec<f64>,
    times: u128,
}

#[derive(Serialize)]
struct SpecOut<'a> {
    repeat: Vec<RunOut>,
    approximate: bool,
    note: &'a Option<String>,
}

impl<T: Scalar> MoranSpec<T> {
    /// Builds a structure, checking ratios in (0,1), at least one child per
    /// level, and `Σ_j c_j ≤ 1` on every level.
    pub fn new(runs: Vec<Run<T>>) -> Result<Self> {
        let runs: Vec<Run<T>> = runs.into_iter().filter(|r| r.times > 0).collect();
        if runs.is_empty() {
            return Err(Error::Domain("Moran structure has no levels".into()));
        }
        let slack = T::rel_slack();
        for (k, run) in runs.iter().enumerate() {
            if run.branches.is_empty() {
                return Err(Error::Domain(format!("run {k} has a level without children")));
            }
            for b in &run.branches {
                if !(b.ln_ratio.is_finite() && b.ln_ratio < T::zero()) {
                    return Err(Error::Domain(format!(
                        "run {k}: ratio exp({}) outside (0,1)",
                        to_f64(b.ln_ratio)
                    )));
                }
                if !(b.ln_mult.is_finite() && b.ln_mult >= T::zero()) {
                    return Err(Error::Domain(format!("run {k}: multiplicity below one")));
                }
            }
            if run.level_pressure(T::one()) > slack {
                return Err(Error::Domain(format!(
                    "run {k}: child ratios sum to {} > 1",
                    to_f64(run.level_pressure(T::one()).exp())
                )));
            }
        }
        Ok(MoranSpec {
            runs,
            approximate: false,
            note: None,
        })
    }

    /// One run per level, each child listed explicitly.
    pub fn from_levels(levels: &[Vec<T>]) -> Result<Self> {
        Self::new(levels.iter().map(|l| Run { branches: plain_branches(l), times: 1 }).collect())
    }

    pub fn runs(&self) -> &[Run<T>] {
        &self.runs
    }

    pub fn levels(&self) -> u128 {
        self.runs.iter().map(|r| r.times).sum()
    }

    /// Level index (1-based) at which each run ends.
    pub fn run_ends(&self) -> Vec<u128> {
        self.runs
            .iter()
            .scan(0u128, |acc, r| {
                *acc += r.times;
                Some(*acc)
            })
            .collect()
    }

    /// Children of level `k` (1-based) with multiplicities expanded; only for
    /// integer multiplicities.
    pub fn level_ratios(&self, k: u128) -> Option<Vec<T>> {
        let mut left = k;
        for run in &self.runs {
            if left == 0 {
                break;
            }
            if left <= run.times {
                return Some(
                    run.branches
                        .iter()
                        .flat_map(|b| {
                            let m = to_f64(b.ln_mult.exp()).round() as usize;
                            std::iter::repeat(b.ln_ratio.exp()).take(m)
                        })
                        .collect(),
                );
            }
            left -= run.times;
        }
        None
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dto: SpecDto = serde_json::from_str(text)?;
        let mut runs: Vec<Run<T>> = dto
            .levels
            .iter()
            .map(|l| Run { branches: plain_branches(&l.iter().map(|&x| lit(x)).collect::<Vec<T>>()), times: 1 })
            .collect();
        for r in dto.repeat {
            let ln_ratios: Vec<f64> = match (r.ratios, r.ln_ratios) {
                (Some(c), None) => c.iter().map(|x| x.ln()).collect(),
                (None, Some(l)) => l,
                _ => return Err(Error::Malformed("repeat entry needs exactly one of ratios, ln_ratios".into())),
            };
            let ln_mults: Vec<f64> = match (r.multiplicities, r.ln_multiplicities) {
                (None, None) => vec![0.0; ln_ratios.len()],
                (Some(m), None) => m.iter().map(|x| x.ln()).collect(),
                (None, Some(l)) => l,
                _ => return Err(Error::Malformed("repeat entry has both multiplicity forms".into())),
            };
            if ln_mults.len() != ln_ratios.len() {
                return Err(Error::Malformed("multiplicities and ratios differ in length".into()));
            }
            if ln_ratios.iter().chain(&ln_mults).any(|x| x.is_nan()) {
                return Err(Error::Domain("ratios and multiplicities must be positive".into()));
            }
            runs.push(Run {
                branches: ln_ratios
                    .iter()
                    .zip(&ln_mults)
                    .map(|(&c, &m)| Branch { ln_ratio: lit(c), ln_mult: lit(m) })
                    .collect(),
                times: r.times,
            });
        }
        let mut spec = Self::new(runs)?;
        spec.approximate = dto.approximate;
        spec.note = dto.note;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        let out = SpecOut {
            repeat: self
                .runs
                .iter()
                .map(|r| RunOut {
                    ln_ratios: r.branches.iter().map(|b| to_f64(b.ln_ratio)).collect(),
                    ln_multiplicities: r.branches.iter().map(|b| to_f64(b.ln_mult)).collect(),
                    times: r.times,
                })
                .collect(),
            approximate: self.approximate,
            note: &self.note,
        };
        format::to_json(&out)
    }
}

fn plain_branches<T: Scalar>(ratios: &[T]) -> Vec<Branch<T>> {
    ratios
        .iter()
        .map(|&c| Branch {
            ln_ratio: if c > T::zero() { c.ln() } else { T::nan() },
            ln_mult: T::zero(),
        })
        .collect()
}

/// Levels of each run among the first `k`.
fn prefix_counts<T: Scalar>(spec: &MoranSpec<T>, k: u128) -> impl Iterator<Item = (&Run<T>, T)> + Clone {
    let mut left = k;
    spec.runs.iter().map_while(move |r| {
        if left == 0 {
            return None;
        }
        let used = left.min(r.times);
        left -= used;
        Some((r, lit::<T>(used as f64)))
    })
}

fn check_level<T: Scalar>(spec: &MoranSpec<T>, k: u128) -> Result<()> {
    if k < 1 || k > spec.levels() {
        return Err(Error::Domain(format!("level {k} outside [1, {}]", spec.levels())));
    }
    Ok(())
}

/// Root of `Σ_{i ≤ k} ln(Σ_j c_{i,j}^s) = 0`.
pub fn s_k<T: Scalar>(spec: &MoranSpec<T>, k: u128) -> Result<T> {
    check_level(spec, k)?;
    let levels = prefix_counts(spec, k);
    let f = |s: T| levels.clone().map(|(r, n)| n * r.level_pressure(s)).sum::<T>();
    if f(T::zero()) <= T::zero() {
        return Ok(T::zero());
    }
    solve_decreasing(f, T::zero(), T::one(), lit(ROOT_TOL))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SkRow<T> {
    pub k: u128,
    pub s_k: T,
    /// `ln c_k`, smallest child ratio on level `k`.
    pub ln_c: T,
    /// `ln M_k`, the largest `ln r_ω` over words of length `k`.
    pub ln_m: T,
    pub ratio_log: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkSequence<T> {
    pub rows: Vec<SkRow<T>>,
    /// Fitted `ratio_log` decreases over the second half of the rows.
    pub trend_ok: bool,
}

impl<T: Scalar> SkSequence<T> {
    pub fn to_csv(&self) -> String {
        format::csv(
            "k,s_k,c_k,M_k,ratio_log",
            self.rows.iter().map(|r| {
                vec![
                    r.k.to_string(),
                    format::fmt_g(to_f64(r.s_k)),
                    format::fmt_g(to_f64(r.ln_c.exp())),
                    format::fmt_g(to_f64(r.ln_m.exp())),
                    format::fmt_g(to_f64(r.ratio_log)),
                ]
            }),
        )
    }
}

fn sk_row<T: Scalar>(spec: &MoranSpec<T>, k: u128) -> Result<SkRow<T>> {
    let s = s_k(spec, k)?;
    let ln_m: T = prefix_counts(spec, k).map(|(r, n)| n * r.ln_max_ratio()).sum();
    let last = prefix_counts(spec, k).last().expect("k ≥ 1").0;
    let ln_c = last.ln_min_ratio();
    Ok(SkRow {
        k,
        s_k: s,
        ln_c,
        ln_m,
        ratio_log: ln_c / ln_m,
    })
}

/// Rows at the given levels, with the trend flag for `log c_k / log M_k`.
pub fn sk_sequence_at<T: Scalar>(spec: &MoranSpec<T>, ks: &[u128]) -> Result<SkSequence<T>> {
    let rows = ks.par_iter().map(|&k| sk_row(spec, k)).collect::<Result<Vec<_>>>()?;
    let trend_ok = trend_to_zero(&rows);
    Ok(SkSequence { rows, trend_ok })
}

fn trend_to_zero<T: Scalar>(rows: &[SkRow<T>]) -> bool {
    let Some(last) = rows.last() else {
        return false;
    };
    if last.ratio_log.abs() < lit(TREND_FLOOR) {
        return true;
    }
    let half = &rows[rows.len() / 2..];
    let xs: Vec<T> = half.iter().map(|r| lit(r.k as f64)).collect();
    let ys: Vec<T> = half.iter().map(|r| r.ratio_log).collect();
    let Some((a, b)) = linear_fit(&xs, &ys) else {
        return false;
    };
    let (x0, x1) = (xs[0], *xs.last().expect("non-empty"));
    let (y0, y1) = (a + b * x0, a + b * x1);
    b < T::zero() && y0 - y1 >= lit::<T>(TREND_DROP) * y0.abs()
}

/// `s_k`, `c_k`, `M_k` and `log c_k / log M_k` for `k = 1..=k_max`.
pub fn sk_sequence<T: Scalar>(spec: &MoranSpec<T>, k_max: u128) -> Result<SkSequence<T>> {
    check_level(spec, k_max)?;
    let ks: Vec<u128> = (1..=k_max).collect();
    sk_sequence_at(spec, &ks)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PackingDim<T> {
    pub dim: T,
    pub s_sequence: SkSequence<T>,
    pub condition_ok: bool,
}

/// `max s_k` over the last `window` levels up to `k_max`, standing in for
/// `limsup s_k`.
pub fn packing_dim<T: Scalar>(spec: &MoranSpec<T>, k_max: u128, window: u128) -> Result<PackingDim<T>> {
    if window < 1 || window > k_max {
        return Err(Error::Domain(format!("window {window} outside [1, {k_max}]")));
    }
    let seq = sk_sequence(spec, k_max)?;
    let dim = seq
        .rows
        .iter()
        .filter(|r| r.k > k_max - window)
        .map(|r| r.s_k)
        .fold(T::neg_infinity(), T::max);
    Ok(PackingDim {
        dim,
        condition_ok: seq.trend_ok,
        s_sequence: seq,
    })
}

/// Levels sampled geometrically (ratio `growth`) together with every run end.
pub fn sample_levels<T: Scalar>(spec: &MoranSpec<T>, growth: f64) -> Vec<u128> {
    let total = spec.levels();
    let mut ks = spec.run_ends();
    let mut k = 1u128;
    while k < total {
        ks.push(k);
        let g = (k as f64 * growth).ceil();
        k = if g >= total as f64 { total } else { (g as u128).max(k + 1) };
    }
    ks.push(total);
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// `packing_dim` for structures too deep to scan level by level: `s_k` is
/// taken at sampled levels and the limsup surrogate is the maximum over the
/// last `tail_fraction` of the samples.
pub fn packing_dim_sampled<T: Scalar>(spec: &MoranSpec<T>, growth: f64, tail_fraction: f64) -> Result<PackingDim<T>> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Domain(format!("tail fraction {tail_fraction} outside (0,1]")));
    }
    if !(growth > 1.0) {
        return Err(Error::Domain(format!("growth {growth} must exceed 1")));
    }
    let ks = sample_levels(spec, growth);
    let seq = sk_sequence_at(spec, &ks)?;
    let start = ((1.0 - tail_fraction) * seq.rows.len() as f64).floor() as usize;
    let dim = seq.rows[start.min(seq.rows.len() - 1)..]
        .iter()
        .map(|r| r.s_k)
        .fold(T::neg_infinity(), T::max);
    Ok(PackingDim {
        dim,
        condition_ok: seq.trend_ok,
        s_sequence: seq,
    })
}

fn ln_factorial(n: u128) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Moran structure of a divergence schedule.
///
/// Each block is cut into sub-blocks of `TYPE_CLASS_LEN` digits. A sub-block
/// becomes one level whose children are all words with the digit counts the
/// proportional fill produces over that length (a multinomial number of
/// words, each with ratio `Π r_i^{c_i}`). A shorter remainder sub-block
/// becomes one extra level.
pub fn from_schedule<T: Scalar>(model: &IfsModel<T>, schedule: &BlockSchedule<T>) -> Result<MoranSpec<T>> {
    let mut runs = Vec::new();
    let type_class = |freq: &[T], len: u128| -> Result<Branch<T>> {
        if freq.len() != model.len() {
            return Err(Error::Malformed(format!(
                "block frequency has {} entries for {} maps",
                freq.len(),
                model.len()
            )));
        }
        let counts = fill_counts(freq, len);
        let ln_mult = ln_factorial(len) - counts.iter().map(|&c| ln_factorial(c)).sum::<f64>();
        let ln_ratio = counts
            .iter()
            .zip(model.ln_ratios())
            .map(|(&c, &r)| lit::<T>(c as f64) * r)
            .sum();
        Ok(Branch {
            ln_ratio,
            ln_mult: lit(ln_mult.max(0.0)),
        })
    };
    for b in &schedule.blocks {
        let len = TYPE_CLASS_LEN.min(b.len);
        runs.push(Run {
            branches: vec![type_class(&b.freq, len)?],
            times: b.len / len,
        });
        if b.len % len > 0 {
            runs.push(Run {
                branches: vec![type_class(&b.freq, b.len % len)?],
                times: 1,
            });
        }
    }
    let mut spec = MoranSpec::new(runs)?;
    spec.approximate = true;
    spec.note = Some(format!(
        "one level per {TYPE_CLASS_LEN} digits of each block; children are the words with the block's fill counts"
    ));
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::schedule;
    use crate::spectrum::{alpha, divergence_dimensions};

    const LOG2_LOG3: f64 = 0.630929753571457437;

    fn constant(k: u128) -> MoranSpec<f64> {
        MoranSpec::new(vec![Run { branches: plain_branches(&[1.0 / 3.0, 1.0 / 3.0]), times: k }]).unwrap()
    }

    fn alternating_doubling(blocks: u32) -> MoranSpec<f64> {
        let a = plain_branches(&[1.0 / 3.0, 1.0 / 3.0]);
        let b = plain_branches(&[0.25; 4]);
        let runs = (0..blocks)
            .map(|j| Run {
                branches: if j % 2 == 0 { a.clone() } else { b.clone() },
                times: 1 << j,
            })
            .collect();
        MoranSpec::new(runs).unwrap()
    }

    #[test]
    fn constant_structure_gives_similarity_dimension() {
        let spec = constant(30);
        for k in 1..=30 {
            assert!((s_k(&spec, k).unwrap() - LOG2_LOG3).abs() < 1e-10);
        }
        let p = packing_dim(&spec, 30, 7).unwrap();
        assert!((p.dim - LOG2_LOG3).abs() < 1e-10 && p.condition_ok);
    }

    #[test]
    fn single_level_closed_form() {
        let spec = MoranSpec::from_levels(&[vec![0.5f64, 0.25, 0.25]]).unwrap();
        assert!((s_k(&spec, 1).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_branch_levels_give_zero() {
        let spec = MoranSpec::from_levels(&[vec![0.5], vec![0.1]]).unwrap();
        assert_eq!(s_k(&spec, 2).unwrap(), 0.0);
    }

    #[test]
    fn alternating_structure_oscillates() {
        let spec = alternating_doubling(5);
        assert_eq!(spec.levels(), 31);
        let seq = sk_sequence(&spec, 31).unwrap();
        let s: Vec<f64> = seq.rows.iter().map(|r| r.s_k).collect();
        // Closed form: (n_A ln 2 + n_B ln 4) / (n_A ln 3 + n_B ln 4).
        let closed = |na: f64, nb: f64| (na * 2f64.ln() + nb * 4f64.ln()) / (na * 3f64.ln() + nb * 4f64.ln());
        assert!((s[14] - closed(5.0, 10.0)).abs() < 1e-10);
        assert!((s[30] - closed(21.0, 10.0)).abs() < 1e-10);
        assert!(s[14] > s[6] && s[30] < s[14]);
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(MoranSpec::from_levels(&[vec![0.6, 0.6]]), Err(Error::Domain(_))));
        assert!(matches!(MoranSpec::from_levels(&[vec![1.2]]), Err(Error::Domain(_))));
        assert!(matches!(MoranSpec::<f64>::from_levels(&[vec![]]), Err(Error::Domain(_))));
        assert!(matches!(MoranSpec::<f64>::from_levels(&[]), Err(Error::Domain(_))));
        assert!(matches!(s_k(&constant(3), 4), Err(Error::Domain(_))));
        assert!(matches!(packing_dim(&constant(3), 3, 4), Err(Error::Domain(_))));
    }

    #[test]
    fn json_forms() {
        let spec: MoranSpec<f64> = MoranSpec::from_json(
            r#"{"levels":[[0.3333333333333333,0.3333333333333333]],"repeat":[{"ratios":[0.25],"multiplicities":[4],"times":3}]}"#,
        )
        .unwrap();
        assert_eq!(spec.levels(), 4);
        assert_eq!(spec.level_ratios(2).unwrap(), vec![0.25; 4]);
        let back: MoranSpec<f64> = MoranSpec::from_json(&spec.to_json()).unwrap();
        assert!((s_k(&back, 4).unwrap() - s_k(&spec, 4).unwrap()).abs() < 1e-12);
        assert!(matches!(MoranSpec::<f64>::from_json(r#"{"repeat":[{"times":2}]}"#), Err(Error::Malformed(_))));
        assert!(matches!(MoranSpec::<f64>::from_json("[1]"), Err(Error::Parse(_))));
    }

    #[test]
    fn ratio_log_examples() {
        let seq = sk_sequence(&constant(40), 40).unwrap();
        for r in &seq.rows {
            assert!((r.ratio_log - 1.0 / r.k as f64).abs() < 1e-12);
        }
        assert!(seq.trend_ok);
        // c_k = 3^{-k}: ratio_log = 2/(k+1).
        let runs = (1..=40)
            .map(|k| Run { branches: vec![Branch { ln_ratio: -(k as f64) * 3f64.ln(), ln_mult: 0.0 }], times: 1 })
            .collect();
        let seq = sk_sequence(&MoranSpec::new(runs).unwrap(), 40).unwrap();
        for r in &seq.rows {
            assert!((r.ratio_log - 2.0 / (r.k as f64 + 1.0)).abs() < 1e-12);
        }
        assert!(seq.trend_ok);
        // c_k = M_{k-1}: ratio_log = 1/2 from level 2 on.
        let mut ln_m = 0.5f64.ln();
        let mut runs = vec![Run { branches: vec![Branch { ln_ratio: ln_m, ln_mult: 0.0 }], times: 1 }];
        for _ in 2..=40 {
            runs.push(Run { branches: vec![Branch { ln_ratio: ln_m, ln_mult: 0.0 }], times: 1 });
            ln_m *= 2.0;
        }
        let seq = sk_sequence(&MoranSpec::new(runs).unwrap(), 40).unwrap();
        assert!(seq.rows[1..].iter().all(|r| (r.ratio_log - 0.5).abs() < 1e-12));
        assert!(!seq.trend_ok);
    }

    #[test]
    fn sk_csv_header() {
        let csv = sk_sequence(&constant(2), 2).unwrap().to_csv();
        assert!(csv.starts_with("k,s_k,c_k,M_k,ratio_log\n1,0.630929753571,0.333333333333,0.333333333333,1\n"));
    }

    #[test]
    fn sampled_matches_dense_on_constant() {
        let p = packing_dim_sampled(&constant(1 << 40), 1.05, 0.5).unwrap();
        assert!((p.dim - LOG2_LOG3).abs() < 1e-10);
    }

    fn cantor() -> IfsModel<f64> {
        IfsModel::from_parts(&[1.0 / 3.0, 1.0 / 3.0], &[0.0, 2.0 / 3.0], &[0.3, 0.7]).unwrap()
    }

    #[test]
    fn singleton_schedule_tracks_spectrum_value() {
        let m = cantor();
        let a1 = alpha(&m, 1.0).unwrap();
        let spec = from_schedule(&m, &schedule(&m, a1, a1, 4, 512).unwrap()).unwrap();
        assert!(spec.approximate);
        let p = packing_dim_sampled(&spec, 1.01, 0.5).unwrap();
        assert!((p.dim - a1).abs() < 0.02 && p.dim <= LOG2_LOG3, "{}", p.dim);
    }

    #[test]
    fn dirac_block_is_single_branch() {
        let m = cantor();
        let sched = BlockSchedule {
            blocks: vec![crate::divergence::Block { alpha: 0.3246, freq: vec![0.0, 1.0], len: 600, level: 1 }],
        };
        let spec = from_schedule(&m, &sched).unwrap();
        assert_eq!(spec.levels(), 3);
        assert_eq!(s_k(&spec, 3).unwrap(), 0.0);
    }

    #[test]
    fn interval_schedule_matches_packing_dimension() {
        let m = cantor();
        let spec = from_schedule(&m, &schedule(&m, 0.4, 0.6, 6, 50).unwrap()).unwrap();
        let p = packing_dim_sampled(&spec, 1.01, 0.5).unwrap();
        let target = divergence_dimensions(&m, 0.4, 0.6).unwrap().dim_P_equal.unwrap();
        assert!((p.dim - target).abs() <= 0.05, "{} vs {}", p.dim, target);
    }

    mod properties {
        use proptest::prelude::*;

        use super::*;

        fn arb_level(max_children: usize) -> impl Strategy<Value = Vec<f64>> {
            (proptest::collection::vec(0.05f64..1.0, 1..=max_children), 0.1f64..0.99).prop_map(|(w, total)| {
                let t: f64 = w.iter().sum();
                w.into_iter().map(|x| x * total / t).collect()
            })
        }

        fn words_sum(levels: &[Vec<f64>], s: f64) -> f64 {
            let mut acc = vec![1.0f64];
            for level in levels {
                acc = acc.iter().flat_map(|&r| level.iter().map(move |&c| r * c)).collect();
            }
            acc.iter().map(|r| r.powf(s)).sum()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn root_residual(levels in proptest::collection::vec(arb_level(4), 1..12)) {
                let spec = MoranSpec::from_levels(&levels).unwrap();
                let k = levels.len() as u128;
                let s = s_k(&spec, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
                let f: f64 = levels.iter().map(|l| l.iter().map(|c| c.powf(s)).sum::<f64>().ln()).sum();
                if s > 0.0 {
                    prop_assert!(f.abs() <= 1e-10, "residual {f} at s = {s}");
                }
            }

            #[test]
            fn enumerated_words_sum_to_one(levels in proptest::collection::vec(arb_level(3), 1..=8)) {
                let spec = MoranSpec::from_levels(&levels).unwrap();
                for k in 1..=levels.len() {
                    let s = s_k(&spec, k as u128).unwrap();
                    prop_assert!((words_sum(&levels[..k], s) - 1.0).abs() <= 1e-8);
                }
            }

            #[test]
            fn repeating_a_constant_level_keeps_s(level in arb_level(4), k in 1u128..40) {
                let run = |times| MoranSpec::new(vec![Run { branches: plain_branches(&level), times }]).unwrap();
                let (short, long) = (run(k), run(k + 1));
                let a = s_k(&short, k).unwrap();
                prop_assert!((s_k(&long, k + 1).unwrap() - a).abs() <= 1e-12);
                prop_assert!((s_k(&long, k).unwrap() - a).abs() <= 1e-12);
            }

            #[test]
            fn fast_alternation_separates_limits(ca in 0.05f64..0.2, cb in 0.3f64..0.45) {
                // Runs of length 4^j alternate between two uniform levels with
                // well-separated dimensions.
                let a = plain_branches(&[ca, ca]);
                let b = plain_branches(&[cb, cb]);
                let runs = (0..8u32)
                    .map(|j| Run { branches: if j % 2 == 0 { a.clone() } else { b.clone() }, times: 1u128 << (2 * j) })
                    .collect();
                let spec = MoranSpec::new(runs).unwrap();
                let ends = spec.run_ends();
                let seq = sk_sequence_at(&spec, &ends[4..]).unwrap();
                let hi = seq.rows.iter().map(|r| r.s_k).fold(f64::MIN, f64::max);
                let lo = seq.rows.iter().map(|r| r.s_k).fold(f64::MAX, f64::min);
                let (da, db) = (2f64.ln() / -ca.ln(), 2f64.ln() / -cb.ln());
                prop_assert!(hi - lo >= 0.3 * (db - da), "{lo}..{hi} vs {da}..{db}");
            }
        }
    }
}
