//! Digit sequences whose cylinder quotients `T_n = ln p_{ω|n} / ln r_{ω|n}`
//! accumulate on a prescribed interval `I ⊆ [α_min, α_max]`.
//!
//! A grid of targets sweeps `I` ever more finely; each target becomes a block
//! of digits with Gibbs frequencies realising that exponent, and every block
//! dwarfs everything before it so that `T_n` settles near each target in turn.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::ifs::IfsModel;
use crate::scalar::{lit, to_f64, Scalar};
use crate::spectrum::{alpha_from_weights, alpha_range, beta, divergence_dimensions, gibbs_weights, is_degenerate, legendre, Classification};

/// Schedules whose total length would exceed this are refused.
pub const MAX_TOTAL_LEN: u128 = 1 << 120;
/// Largest digit prefix materialised by `emit_digits`.
pub const MAX_EMIT: u128 = 1 << 28;
/// Resolution of the visited-value set in `verify_accumulation`.
pub const VISIT_GRID: f64 = 1e-3;
/// Deficits closer than this count as tied in the proportional fill.
const FILL_TIE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaGrid<T> {
    /// `levels[i - 1]` is level `i`.
    pub levels: Vec<Vec<T>>,
    pub anchor: T,
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> AlphaGrid<T> {
    pub fn targets(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(i, lv)| lv.iter().map(move |&a| (i + 1, a)))
    }
}

/// Points strictly after `from` up to and including `to`, equally spaced with
/// step at most `step`; a single jump is allowed when it is within `first`.
fn coarse_path<T: Scalar>(from: T, to: T, first: T, step: T) -> Vec<T> {
    let w = (to - from).abs();
    if w == T::zero() {
        return Vec::new();
    }
    let k = if w <= first {
        1
    } else {
        to_f64((w / step - lit(1e-9)).ceil()).max(1.0) as usize
    };
    (1..=k)
        .map(|j| {
            if j == k {
                to
            } else {
                from + (to - from) * lit(j as f64) / lit(k as f64)
            }
        })
        .collect()
}

/// Level `i` runs from the anchor out to the far end of `I`, sweeps back
/// across `I` with mesh at most `1/i`, and returns to the anchor. Only the
/// first jump, measured from the previous level's anchor, may reach `1/(i-1)`.
pub fn alpha_grid<T: Scalar>(lo: T, hi: T, i_max: usize, anchor: T) -> Result<AlphaGrid<T>> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::Malformed(format!("[{}, {}] is not an interval", to_f64(lo), to_f64(hi))));
    }
    if i_max < 1 {
        return Err(Error::Domain("i_max must be at least 1".into()));
    }
    let slack = T::rel_slack() * (T::one() + hi.abs().max(lo.abs()));
    if !(anchor >= lo - slack && anchor <= hi + slack) {
        return Err(Error::Domain(format!(
            "anchor {} outside [{}, {}]",
            to_f64(anchor),
            to_f64(lo),
            to_f64(hi)
        )));
    }
    let anchor = anchor.max(lo).min(hi);
    let width = hi - lo;
    let levels = (1..=i_max)
        .map(|i| {
            if width == T::zero() {
                return vec![anchor];
            }
            let step = T::one() / lit(i as f64);
            let first = if i == 1 { T::infinity() } else { T::one() / lit((i - 1) as f64) };
            let (far, near) = if hi - anchor > anchor - lo { (hi, lo) } else { (lo, hi) };
            let mut level = coarse_path(anchor, far, first, step);
            let m = (i as f64).max(to_f64((width * lit(i as f64) - lit(1e-9)).ceil()) + 1.0) as usize;
            level.extend((1..m).map(|j| {
                if j == m - 1 {
                    near
                } else {
                    far + (near - far) * lit(j as f64) / lit((m - 1) as f64)
                }
            }));
            level.extend(coarse_path(near, anchor, step, step));
            level
        })
        .collect();
    Ok(AlphaGrid { levels, anchor, lo, hi })
}

/// Digit distribution realising a cylinder exponent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DigitFrequency<T> {
    pub freq: Vec<T>,
    pub q: T,
    pub clamped: bool,
}

/// Gibbs weights `ν_i = p_i^q r_i^{β(q)}` at the `q` with `α(q) = target`.
///
/// Targets beyond `α(±q_cap)` mix the clamped weights with the weights
/// restricted to the extremal digits so the exponent is still met exactly.
pub fn freq_for_alpha<T: Scalar>(model: &IfsModel<T>, target: T) -> Result<DigitFrequency<T>> {
    let point = legendre(model, target)?;
    let w = gibbs_weights(model, point.q, beta(model, point.q)?);
    let total: T = w.iter().copied().sum();
    let w: Vec<T> = w.into_iter().map(|x| x / total).collect();
    if !point.clamped || is_degenerate(model) {
        return Ok(DigitFrequency {
            freq: w,
            q: point.q,
            clamped: point.clamped,
        });
    }
    let (amin, amax) = alpha_range(model);
    let extreme = if point.q < T::zero() { amax } else { amin };
    let tie = lit::<T>(1e-12) * (T::one() + extreme.abs());
    let ext: Vec<T> = model
        .ln_probs()
        .iter()
        .zip(model.ln_ratios())
        .zip(&w)
        .map(|((&p, &r), &x)| if (p / r - extreme).abs() <= tie { x } else { T::zero() })
        .collect();
    let ext_total: T = ext.iter().copied().sum();
    let ext: Vec<T> = ext.into_iter().map(|x| x / ext_total).collect();
    // α(λ·ext + (1-λ)·w) = target is linear in λ after clearing denominators.
    let gap = |v: &[T]| {
        v.iter()
            .zip(model.ln_probs().iter().zip(model.ln_ratios()))
            .map(|(&x, (&p, &r))| x * (p - target * r))
            .sum::<T>()
    };
    let (gw, ge) = (gap(&w), gap(&ext));
    let lambda = if gw == ge { T::one() } else { (gw / (gw - ge)).max(T::zero()).min(T::one()) };
    let freq = ext
        .iter()
        .zip(&w)
        .map(|(&e, &x)| lambda * e + (T::one() - lambda) * x)
        .collect();
    Ok(DigitFrequency {
        freq,
        q: point.q,
        clamped: true,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block<T> {
    pub alpha: T,
    pub freq: Vec<T>,
    pub len: u128,
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule<T> {
    pub blocks: Vec<Block<T>>,
}

impl<T: Scalar> BlockSchedule<T> {
    pub fn total_len(&self) -> u128 {
        self.blocks.iter().map(|b| b.len).sum()
    }

    /// Digit position (0-based) at which each block starts.
    pub fn starts(&self) -> Vec<u128> {
        self.blocks
            .iter()
            .scan(0u128, |acc, b| {
                let s = *acc;
                *acc += b.len;
                Some(s)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        format::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Blocks in grid order with `N_m = max(base_len, 2^{level-1} Σ_{m'<m} N_{m'})`.
pub fn schedule<T: Scalar>(model: &IfsModel<T>, lo: T, hi: T, i_max: usize, base_len: u128) -> Result<BlockSchedule<T>> {
    if base_len == 0 {
        return Err(Error::Domain("base_len must be positive".into()));
    }
    if i_max > 120 {
        return Err(Error::resource(format!("i_max = {i_max} overflows block lengths")));
    }
    let report = divergence_dimensions(model, lo, hi)?;
    let (Classification::Valid, Some([clo, chi]), Some(anchor)) =
        (report.classification, report.clipped, report.alpha_at_sup)
    else {
        return Err(Error::Domain(format!(
            "[{}, {}] is not inside the range of local dimensions",
            to_f64(lo),
            to_f64(hi)
        )));
    };
    let grid = alpha_grid(clo, chi, i_max, anchor)?;
    let mut blocks: Vec<Block<T>> = Vec::new();
    let mut cum: u128 = 0;
    for (level, alpha) in grid.targets() {
        let grown = cum.checked_mul(1u128 << (level - 1)).unwrap_or(u128::MAX);
        let len = base_len.max(grown);
        cum = cum.saturating_add(len);
        if cum > MAX_TOTAL_LEN {
            return Err(Error::resource(format!(
                "schedule length exceeds 2^120 at level {level}; reduce i_max or base_len"
            )));
        }
        let freq = match blocks.iter().find(|b| b.alpha == alpha) {
            Some(b) => b.freq.clone(),
            None => freq_for_alpha(model, alpha)?.freq,
        };
        blocks.push(Block { alpha, freq, len, level });
    }
    Ok(BlockSchedule { blocks })
}

/// Proportional fill: at position `pos` (1-based) emit the digit whose count
/// lies furthest below `ν_i · pos`, lowest index on ties.
fn fill_choice<T: Scalar>(freq: &[T], counts: &[u128], pos: u128) -> usize {
    let pos = lit::<T>(pos as f64);
    let tie = lit::<T>(FILL_TIE);
    let mut best = 0;
    let mut best_deficit = T::neg_infinity();
    for (i, (&nu, &c)) in freq.iter().zip(counts).enumerate() {
        let deficit = nu * pos - lit(c as f64);
        if deficit > best_deficit + tie {
            best = i;
            best_deficit = deficit;
        }
    }
    best
}

/// Digit counts after `len` steps of the proportional fill.
pub fn fill_counts<T: Scalar>(freq: &[T], len: u128) -> Vec<u128> {
    let mut counts = vec![0u128; freq.len()];
    for pos in 1..=len {
        let d = fill_choice(freq, &counts, pos);
        counts[d] += 1;
    }
    counts
}

/// Streams the digits (1-based) of a schedule.
#[derive(Clone, Debug)]
pub struct DigitStream<'a, T> {
    blocks: &'a [Block<T>],
    block: usize,
    pos: u128,
    counts: Vec<u128>,
}

impl<'a, T: Scalar> DigitStream<'a, T> {
    pub fn new(schedule: &'a BlockSchedule<T>) -> Self {
        let n = schedule.blocks.first().map_or(0, |b| b.freq.len());
        DigitStream {
            blocks: &schedule.blocks,
            block: 0,
            pos: 0,
            counts: vec![0; n],
        }
    }
}

impl<T: Scalar> Iterator for DigitStream<'_, T> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        while self.block < self.blocks.len() && self.pos == self.blocks[self.block].len {
            self.block += 1;
            self.pos = 0;
            self.counts.iter_mut().for_each(|c| *c = 0);
        }
        let b = self.blocks.get(self.block)?;
        self.pos += 1;
        let d = fill_choice(&b.freq, &self.counts, self.pos);
        self.counts[d] += 1;
        Some(d + 1)
    }
}

fn check_schedule<T: Scalar>(model: &IfsModel<T>, schedule: &BlockSchedule<T>) -> Result<()> {
    match schedule.blocks.iter().find(|b| b.freq.len() != model.len()) {
        Some(b) => Err(Error::Malformed(format!(
            "block frequency has {} entries for {} maps",
            b.freq.len(),
            model.len()
        ))),
        None => Ok(()),
    }
}

/// The first `n` digits of the schedule.
pub fn emit_digits<T: Scalar>(model: &IfsModel<T>, schedule: &BlockSchedule<T>, n: u128) -> Result<Vec<usize>> {
    check_schedule(model, schedule)?;
    if n > schedule.total_len() {
        return Err(Error::Domain(format!(
            "{n} digits requested from a schedule of length {}",
            schedule.total_len()
        )));
    }
    if n > MAX_EMIT {
        return Err(Error::resource(format!("{n} digits exceed the emission limit 2^28")));
    }
    Ok(DigitStream::new(schedule).take(n as usize).collect())
}

/// Digits as a text line: bare characters for up to nine maps, otherwise
/// comma separated.
pub fn digits_to_text(digits: &[usize], n_maps: usize) -> String {
    let mut out = if n_maps <= 9 {
        digits.iter().map(|d| char::from(b'0' + *d as u8)).collect::<String>()
    } else {
        digits.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
    };
    out.push('\n');
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuotientRow<T> {
    pub n: u128,
    pub ln_p: T,
    pub ln_r: T,
    pub t: T,
    /// Bound on `|c_i − ĉ_i|` for the digit counts behind the row; zero when
    /// the counts were produced by the fill itself.
    pub count_error: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuotientTrace<T> {
    pub rows: Vec<QuotientRow<T>>,
}

impl<T: Scalar> QuotientTrace<T> {
    pub fn to_csv(&self) -> String {
        format::csv(
            "n,ln_p,ln_r,T",
            self.rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    format::fmt_g(to_f64(r.ln_p)),
                    format::fmt_g(to_f64(r.ln_r)),
                    format::fmt_g(to_f64(r.t)),
                ]
            }),
        )
    }

    /// Rows in the last `fraction` of the trace (at least one).
    pub fn tail(&self, fraction: T) -> &[QuotientRow<T>] {
        let len = self.rows.len();
        let start = to_f64((T::one() - fraction) * lit(len as f64)).floor() as usize;
        &self.rows[start.min(len.saturating_sub(1))..]
    }

    /// `(min, max)` of `T` over `tail(fraction)`.
    pub fn tail_range(&self, fraction: T) -> Option<(T, T)> {
        self.tail(fraction).iter().fold(None, |acc, r| {
            Some(acc.map_or((r.t, r.t), |(lo, hi): (T, T)| (lo.min(r.t), hi.max(r.t))))
        })
    }
}

fn quotient_row<T: Scalar>(model: &IfsModel<T>, n: u128, counts: impl Iterator<Item = T> + Clone, count_error: T) -> QuotientRow<T> {
    let ln_p: T = counts.clone().zip(model.ln_probs()).map(|(c, &p)| c * p).sum();
    let ln_r: T = counts.zip(model.ln_ratios()).map(|(c, &r)| c * r).sum();
    QuotientRow {
        n,
        ln_p,
        ln_r,
        t: ln_p / ln_r,
        count_error,
    }
}

/// Running sums of `ln p` and `ln r` along `digits` (1-based).
pub fn cylinder_quotient_trace<T: Scalar>(model: &IfsModel<T>, digits: &[usize]) -> Result<QuotientTrace<T>> {
    if digits.is_empty() {
        return Err(Error::Domain("empty digit sequence".into()));
    }
    let (mut ln_p, mut ln_r) = (T::zero(), T::zero());
    let rows = digits
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            if d == 0 || d > model.len() {
                return Err(Error::Malformed(format!("digit {d} outside [1, {}]", model.len())));
            }
            ln_p = ln_p + model.ln_probs()[d - 1];
            ln_r = ln_r + model.ln_ratios()[d - 1];
            Ok(QuotientRow {
                n: k as u128 + 1,
                ln_p,
                ln_r,
                t: ln_p / ln_r,
                count_error: T::zero(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(QuotientTrace { rows })
}

/// Which rows a schedule trace records and how far the fill is simulated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceSampling {
    /// Every row up to here is recorded.
    pub dense_until: u128,
    /// Digits are produced by the fill up to here; beyond, block counts are
    /// taken as `ν · position`, within one digit of the fill per block.
    pub exact_until: u128,
    /// Ratio between consecutive recorded rows past `dense_until`.
    pub growth: f64,
}

impl Default for TraceSampling {
    fn default() -> Self {
        TraceSampling {
            dense_until: 1 << 12,
            exact_until: 1 << 22,
            growth: 1.01,
        }
    }
}

impl TraceSampling {
    fn next_after(&self, n: u128) -> u128 {
        if n < self.dense_until {
            n + 1
        } else {
            let g = ((n as f64) * self.growth).ceil();
            if g >= u128::MAX as f64 {
                u128::MAX
            } else {
                (g as u128).max(n + 1)
            }
        }
    }
}

/// Quotient trace of the full schedule, recorded densely at the start, then
/// geometrically and at every block end.
pub fn schedule_trace<T: Scalar>(model: &IfsModel<T>, schedule: &BlockSchedule<T>, sampling: TraceSampling) -> Result<QuotientTrace<T>> {
    check_schedule(model, schedule)?;
    if schedule.blocks.is_empty() {
        return Err(Error::Domain("empty schedule".into()));
    }
    let n_maps = model.len();
    let mut rows = Vec::new();
    let mut before = vec![T::zero(); n_maps];
    let mut approx_blocks = 0usize;
    let mut next = 1u128;
    let mut start = 0u128;
    for b in &schedule.blocks {
        let end = start + b.len;
        let exact_end = end.min(sampling.exact_until.max(start));
        let mut counts = vec![0u128; n_maps];
        // Simulated part of the block.
        for n in start + 1..=exact_end {
            let d = fill_choice(&b.freq, &counts, n - start);
            counts[d] += 1;
            if n == next || n == end {
                let c = before.iter().zip(&counts).map(|(&a, &c)| a + lit(c as f64));
                rows.push(quotient_row(model, n, c, lit(approx_blocks as f64)));
                next = sampling.next_after(n);
            }
        }
        if exact_end < end {
            approx_blocks += 1;
            let err = lit::<T>(approx_blocks as f64);
            let base = counts.clone();
            let at = |n: u128| {
                let j = lit::<T>((n - exact_end) as f64);
                before
                    .iter()
                    .zip(&base)
                    .zip(&b.freq)
                    .map(move |((&a, &c), &nu)| a + lit::<T>(c as f64) + nu * j)
                    .collect::<Vec<T>>()
            };
            let mut n = next.max(exact_end + 1);
            loop {
                let n_row = n.min(end);
                rows.push(quotient_row(model, n_row, at(n_row).into_iter(), err));
                if n_row == end {
                    break;
                }
                n = sampling.next_after(n_row);
            }
            next = sampling.next_after(end);
            before = at(end);
        } else {
            before = before.iter().zip(&counts).map(|(&a, &c)| a + lit(c as f64)).collect();
        }
        start = end;
    }
    Ok(QuotientTrace { rows })
}

/// `max_i |ln p_i| + α_max · max_i |ln r_i|`, the numerator of the step bound
/// `|T_{n+1} − T_n| ≤ C / |ln r_{ω|n}|`.
pub fn step_constant<T: Scalar>(model: &IfsModel<T>) -> T {
    let max_abs = |v: &[T]| v.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    max_abs(model.ln_probs()) + alpha_range(model).1 * max_abs(model.ln_ratios())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepCheck<T> {
    pub pairs_checked: usize,
    /// Largest `|ΔT| / bound` over consecutive rows; the bound holds when this
    /// is at most one.
    pub worst_ratio: T,
    pub worst_row: u128,
}

impl<T: Scalar> StepCheck<T> {
    pub fn holds(&self) -> bool {
        self.worst_ratio <= T::one()
    }
}

/// Checks the step bound between consecutive rows. Adjacent rows use it
/// directly; for rows `n1 < n2` further apart it is summed using
/// `|ln r_{ω|n}| ≥ n · min_i |ln r_i|`, and rows built from idealised counts
/// get the corresponding error allowance.
pub fn check_step_bound<T: Scalar>(model: &IfsModel<T>, trace: &QuotientTrace<T>) -> StepCheck<T> {
    let c = step_constant(model);
    let min_lr = model.ln_ratios().iter().fold(T::infinity(), |m, &x| m.min(x.abs()));
    let amax = alpha_range(model).1;
    let sum_abs = |v: &[T]| v.iter().fold(T::zero(), |s, &x| s + x.abs());
    let spread = sum_abs(model.ln_probs()) + amax * sum_abs(model.ln_ratios());
    let allowance = |r: &QuotientRow<T>| lit::<T>(2.0) * r.count_error * spread / r.ln_r.abs();
    let mut check = StepCheck {
        pairs_checked: 0,
        worst_ratio: T::zero(),
        worst_row: 0,
    };
    for w in trace.rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let span = if b.n == a.n + 1 {
            T::one() / a.ln_r.abs()
        } else {
            let n1 = a.n as f64;
            let n2 = b.n as f64;
            lit::<T>(1.0 / n1 + ((n2 - 1.0) / n1).ln()) / min_lr
        };
        let bound = c * span + allowance(a) + allowance(b);
        let ratio = (b.t - a.t).abs() / bound;
        check.pairs_checked += 1;
        if ratio > check.worst_ratio {
            check.worst_ratio = ratio;
            check.worst_row = a.n;
        }
    }
    check
}

/// Hausdorff distance between a finite set and `[lo, hi]`.
pub fn hausdorff_to_interval<T: Scalar>(points: &[T], lo: T, hi: T) -> T {
    let mut v: Vec<T> = points.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    let Some((&first, &last)) = v.first().zip(v.last()) else {
        return T::infinity();
    };
    let outside = (lo - first).max(last - hi).max(T::zero());
    let mut uncovered = (first - lo).max(hi - last).max(T::zero());
    for w in v.windows(2) {
        let mid = ((w[0] + w[1]) / lit(2.0)).max(lo).min(hi);
        uncovered = uncovered.max((mid - w[0]).abs().min((w[1] - mid).abs()));
    }
    outside.max(uncovered)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AccumulationReport<T> {
    pub hull_distance: T,
    pub pass: bool,
    pub rows_used: usize,
    pub tail_min: T,
    pub tail_max: T,
}

/// Compares the tail of a trace with `I = [lo, hi]`: values are snapped to a
/// `1e-3` grid and the Hausdorff distance of that set to `I` must be ≤ `tol`.
pub fn verify_accumulation<T: Scalar>(trace: &QuotientTrace<T>, lo: T, hi: T, tail_fraction: T, tol: T) -> Result<AccumulationReport<T>> {
    if trace.rows.is_empty() {
        return Err(Error::Domain("empty trace".into()));
    }
    if !(tail_fraction > T::zero() && tail_fraction < T::one()) {
        return Err(Error::Domain(format!("tail fraction {} outside (0,1)", to_f64(tail_fraction))));
    }
    if lo > hi {
        return Err(Error::Malformed(format!("[{}, {}] is not an interval", to_f64(lo), to_f64(hi))));
    }
    let tail = trace.tail(tail_fraction);
    let mut cells: Vec<i64> = tail
        .iter()
        .map(|r| (to_f64(r.t) / VISIT_GRID).round() as i64)
        .collect();
    cells.sort_unstable();
    cells.dedup();
    let visited: Vec<T> = cells.iter().map(|&k| lit(k as f64 * VISIT_GRID)).collect();
    let d = hausdorff_to_interval(&visited, lo, hi);
    let (tail_min, tail_max) = trace.tail_range(tail_fraction).expect("non-empty tail");
    Ok(AccumulationReport {
        hull_distance: d,
        pass: d <= tol,
        rows_used: tail.len(),
        tail_min,
        tail_max,
    })
}

/// `|α(ν) − target|` for a block, for checking schedules.
pub fn block_exponent_error<T: Scalar>(model: &IfsModel<T>, block: &Block<T>) -> T {
    (alpha_from_weights(model, &block.freq) - block.alpha).abs()
}
