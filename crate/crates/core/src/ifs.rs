//! Iterated function systems of orientation-preserving similarities on the
//! line, their open set condition check, and the symbolic word/cylinder
//! algebra (`p_u`, `r_u`, `S_u(hull)`, stopping families `Γ_r`).

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};

/// Default cap on nodes visited while enumerating a stopping family.
pub const NODE_CAP: usize = 10_000_000;

/// `x ↦ ratio·x + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityMap<T> {
    pub ratio: T,
    pub offset: T,
}

impl<T: Scalar> SimilarityMap<T> {
    pub fn new(ratio: T, offset: T) -> Self {
        Self { ratio, offset }
    }

    #[inline]
    pub fn apply(&self, x: T) -> T {
        self.ratio * x + self.offset
    }

    pub fn fixed_point(&self) -> T {
        self.offset / (T::one() - self.ratio)
    }

    pub fn image(&self, iv: Interval<T>) -> Interval<T> {
        Interval::new(self.apply(iv.lo), self.apply(iv.hi))
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> T {
        self.hi - self.lo
    }

    pub fn contains(&self, x: T) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval<T>) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersect(&self, other: &Interval<T>) -> Option<Interval<T>> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then(|| Interval::new(lo, hi))
    }
}

/// One failed model invariant.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewMaps { count: usize },
    LengthMismatch { maps: usize, probs: usize },
    NonFinite { index: usize },
    RatioOutOfRange { index: usize, ratio: f64 },
    NonPositiveProbability { index: usize, prob: f64 },
    ProbabilitySum { sum: f64 },
    DegenerateHull,
    MapLeavesHull { index: usize },
    ImagesOverlap { first: usize, second: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewMaps { count } => write!(f, "need at least 2 maps, got {count}"),
            Violation::LengthMismatch { maps, probs } => {
                write!(f, "{maps} maps but {probs} probabilities")
            }
            Violation::NonFinite { index } => write!(f, "non-finite parameter at index {index}"),
            Violation::RatioOutOfRange { index, ratio } => {
                write!(f, "ratio {ratio} of map {index} not in (0,1)")
            }
            Violation::NonPositiveProbability { index, prob } => {
                write!(f, "probability {prob} at index {index} is not positive")
            }
            Violation::ProbabilitySum { sum } => write!(f, "probabilities sum to {sum}"),
            Violation::DegenerateHull => write!(f, "attractor hull is a single point"),
            Violation::MapLeavesHull { index } => write!(f, "map {index} does not send hull into hull"),
            Violation::ImagesOverlap { first, second } => {
                write!(f, "images overlap: maps {first} and {second} share interior")
            }
        }
    }
}

/// Result of [`IfsModel::validate`]; empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// The list `(S_1, …, S_N, p_1, …, p_N)` together with the convex hull of
/// its attractor.
#[derive(Clone, Debug, PartialEq)]
pub struct IfsModel<T> {
    maps: Vec<SimilarityMap<T>>,
    probs: Vec<T>,
    ln_ratios: Vec<T>,
    ln_probs: Vec<T>,
    hull: Interval<T>,
}

impl<T: Scalar> IfsModel<T> {
    /// Builds a model without checking its invariants; see [`validate`](Self::validate).
    pub fn new(maps: Vec<SimilarityMap<T>>, probs: Vec<T>) -> Self {
        let ln_ratios = maps.iter().map(|m| m.ratio.ln()).collect();
        let ln_probs = probs.iter().map(|p| p.ln()).collect();
        let hull = hull_of(&maps);
        Self {
            maps,
            probs,
            ln_ratios,
            ln_probs,
            hull,
        }
    }

    /// Builds a model and rejects it unless every invariant holds.
    pub fn checked(maps: Vec<SimilarityMap<T>>, probs: Vec<T>) -> Result<Self> {
        let model = Self::new(maps, probs);
        let report = model.validate();
        if report.is_valid() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(report))
        }
    }

    /// Convenience constructor from parallel slices.
    pub fn from_parts(ratios: &[T], offsets: &[T], probs: &[T]) -> Result<Self> {
        if ratios.len() != offsets.len() {
            return Err(Error::Malformed(format!(
                "{} ratios but {} offsets",
                ratios.len(),
                offsets.len()
            )));
        }
        let maps = ratios
            .iter()
            .zip(offsets)
            .map(|(&r, &t)| SimilarityMap::new(r, t))
            .collect();
        Self::checked(maps, probs.to_vec())
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[SimilarityMap<T>] {
        &self.maps
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn ratio(&self, i: usize) -> T {
        self.maps[i].ratio
    }

    pub fn ln_ratios(&self) -> &[T] {
        &self.ln_ratios
    }

    pub fn ln_probs(&self) -> &[T] {
        &self.ln_probs
    }

    pub fn hull(&self) -> Interval<T> {
        self.hull
    }

    pub fn r_min(&self) -> T {
        self.maps.iter().map(|m| m.ratio).fold(T::infinity(), T::min)
    }

    pub fn r_max(&self) -> T {
        self.maps.iter().map(|m| m.ratio).fold(T::neg_infinity(), T::max)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n = self.maps.len();
        if n < 2 {
            v.push(Violation::TooFewMaps { count: n });
        }
        if n != self.probs.len() {
            v.push(Violation::LengthMismatch {
                maps: n,
                probs: self.probs.len(),
            });
            return ValidationReport { violations: v };
        }
        let mut finite = true;
        for (i, (m, p)) in self.maps.iter().zip(&self.probs).enumerate() {
            if !(m.ratio.is_finite() && m.offset.is_finite() && p.is_finite()) {
                v.push(Violation::NonFinite { index: i });
                finite = false;
            }
        }
        if !finite {
            return ValidationReport { violations: v };
        }
        let mut ratios_ok = true;
        for (i, m) in self.maps.iter().enumerate() {
            if !(m.ratio > T::zero() && m.ratio < T::one()) {
                v.push(Violation::RatioOutOfRange {
                    index: i,
                    ratio: to_f64(m.ratio),
                });
                ratios_ok = false;
            }
        }
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= T::zero() {
                v.push(Violation::NonPositiveProbability {
                    index: i,
                    prob: to_f64(p),
                });
            }
        }
        let sum: T = self.probs.iter().copied().sum();
        if (sum - T::one()).abs() > T::prob_tol() {
            v.push(Violation::ProbabilitySum { sum: to_f64(sum) });
        }
        if !ratios_ok || n < 2 {
            return ValidationReport { violations: v };
        }
        let hull = self.hull;
        if hull.len() <= T::zero() {
            v.push(Violation::DegenerateHull);
            return ValidationReport { violations: v };
        }
        let slack = hull.len() * T::rel_slack();
        let images: Vec<Interval<T>> = self.maps.iter().map(|m| m.image(hull)).collect();
        for (i, im) in images.iter().enumerate() {
            if im.lo < hull.lo - slack || im.hi > hull.hi + slack {
                v.push(Violation::MapLeavesHull { index: i });
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (images[i], images[j]);
                if a.lo.max(b.lo) < a.hi.min(b.hi) - slack {
                    v.push(Violation::ImagesOverlap { first: i, second: j });
                }
            }
        }
        ValidationReport { violations: v }
    }

    fn check_digit(&self, d: usize) -> Result<usize> {
        if d == 0 || d > self.len() {
            return Err(Error::Malformed(format!(
                "digit {d} outside [1, {}]",
                self.len()
            )));
        }
        Ok(d - 1)
    }

    /// Probability, ratio and hull image of the cylinder of `word`.
    pub fn cylinder(&self, word: &Word) -> Result<CylinderData<T>> {
        let mut acc = Affine::identity();
        let mut p = T::one();
        for &d in word.digits() {
            let i = self.check_digit(d)?;
            acc = acc.then(&self.maps[i]);
            p = p * self.probs[i];
        }
        Ok(CylinderData {
            word: word.clone(),
            p_u: p,
            r_u: acc.scale,
            interval: acc.image(self.hull),
        })
    }

    /// `ln p_u` and `ln r_u`, computed without underflow.
    pub fn log_weights(&self, word: &Word) -> Result<(T, T)> {
        let mut lp = T::zero();
        let mut lr = T::zero();
        for &d in word.digits() {
            let i = self.check_digit(d)?;
            lp = lp + self.ln_probs[i];
            lr = lr + self.ln_ratios[i];
        }
        Ok((lp, lr))
    }

    /// The stopping family `Γ_r = {u : r_u < r ≤ r_{u⁻}}`.
    pub fn stopping_words(&self, r: T) -> Result<Vec<Word>> {
        Ok(self
            .stopping_cylinders(r, NODE_CAP)?
            .into_iter()
            .map(|c| c.word)
            .collect())
    }

    /// Cylinders of `Γ_r` in depth-first (lexicographic) order.
    ///
    /// Scales equal to `r` up to rounding count as `≥ r`, so exact ties follow
    /// the exact-arithmetic definition.
    pub fn stopping_cylinders(&self, r: T, node_cap: usize) -> Result<Vec<CylinderData<T>>> {
        if !(r > T::zero() && r < T::one()) {
            return Err(Error::Domain(format!(
                "stopping scale must lie in (0,1), got {}",
                to_f64(r)
            )));
        }
        let below = r * (T::one() - T::rel_slack());
        let mut out = Vec::new();
        let mut visited = 0usize;
        let mut digits = Vec::new();
        self.stopping_dfs(
            below,
            Affine::identity(),
            T::one(),
            &mut digits,
            &mut out,
            &mut visited,
            node_cap,
        )?;
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn stopping_dfs(
        &self,
        below: T,
        acc: Affine<T>,
        p: T,
        digits: &mut Vec<usize>,
        out: &mut Vec<CylinderData<T>>,
        visited: &mut usize,
        cap: usize,
    ) -> Result<()> {
        for (i, m) in self.maps.iter().enumerate() {
            *visited += 1;
            if *visited > cap {
                return Err(Error::resource(format!(
                    "stopping family enumeration exceeded {cap} nodes"
                )));
            }
            let child = acc.then(m);
            let pc = p * self.probs[i];
            digits.push(i + 1);
            if child.scale < below {
                out.push(CylinderData {
                    word: Word(digits.clone()),
                    p_u: pc,
                    r_u: child.scale,
                    interval: child.image(self.hull),
                });
            } else {
                self.stopping_dfs(below, child, pc, digits, out, visited, cap)?;
            }
            digits.pop();
        }
        Ok(())
    }

    /// `Σ_u p_u^q r_u^β` over the given words.
    pub fn antichain_weight_sum(&self, q: T, beta: T, antichain: &[Word]) -> Result<T> {
        let mut total = T::zero();
        for w in antichain {
            let (lp, lr) = self.log_weights(w)?;
            total = total + (q * lp + beta * lr).exp();
        }
        Ok(total)
    }
}

fn hull_of<T: Scalar>(maps: &[SimilarityMap<T>]) -> Interval<T> {
    // For orientation-preserving contractions the hull of the attractor is
    // spanned by the extreme fixed points.
    let fixed = maps.iter().map(|m| m.fixed_point());
    let lo = fixed.clone().fold(T::infinity(), T::min);
    let hi = fixed.fold(T::neg_infinity(), T::max);
    Interval::new(lo, hi)
}

/// Running composition `S_{u_1} ∘ … ∘ S_{u_k}` as `x ↦ scale·x + shift`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Affine<T> {
    pub scale: T,
    pub shift: T,
}

impl<T: Scalar> Affine<T> {
    pub fn identity() -> Self {
        Self {
            scale: T::one(),
            shift: T::zero(),
        }
    }

    /// `self ∘ m`.
    pub fn then(&self, m: &SimilarityMap<T>) -> Self {
        Self {
            scale: self.scale * m.ratio,
            shift: self.shift + self.scale * m.offset,
        }
    }

    pub fn image(&self, iv: Interval<T>) -> Interval<T> {
        Interval::new(self.scale * iv.lo + self.shift, self.scale * iv.hi + self.shift)
    }
}

/// Finite word over `{1, …, N}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn new(digits: Vec<usize>) -> Self {
        Word(digits)
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn digits(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `u⁻`, the word with its last letter dropped.
    pub fn parent(&self) -> Option<Word> {
        (!self.0.is_empty()).then(|| Word(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn is_prefix_of(&self, other: &Word) -> bool {
        other.0.starts_with(&self.0)
    }
}

impl From<&[usize]> for Word {
    fn from(d: &[usize]) -> Self {
        Word(d.to_vec())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", s.join(","))
    }
}

/// Symbolic and geometric data of one cylinder.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderData<T> {
    pub word: Word,
    pub p_u: T,
    pub r_u: T,
    /// `S_u(hull)`, which contains `K_u`.
    pub interval: Interval<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MapJson {
    ratio: f64,
    offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelJson {
    maps: Vec<MapJson>,
    probs: Vec<f64>,
}

impl<T: Scalar> IfsModel<T> {
    /// Parses the model JSON without validating it.
    pub fn from_json_unchecked(text: &str) -> Result<Self> {
        let raw: ModelJson = serde_json::from_str(text)?;
        let maps = raw
            .maps
            .iter()
            .map(|m| SimilarityMap::new(lit(m.ratio), lit(m.offset)))
            .collect();
        Ok(Self::new(maps, raw.probs.iter().map(|&p| lit(p)).collect()))
    }

    /// Parses and validates the model JSON.
    pub fn from_json(text: &str) -> Result<Self> {
        let model = Self::from_json_unchecked(text)?;
        let report = model.validate();
        if report.is_valid() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(report))
        }
    }

    pub fn to_json(&self) -> String {
        let raw = ModelJson {
            maps: self
                .maps
                .iter()
                .map(|m| MapJson {
                    ratio: to_f64(m.ratio),
                    offset: to_f64(m.offset),
                })
                .collect(),
            probs: self.probs.iter().map(|&p| to_f64(p)).collect(),
        };
        serde_json::to_string(&raw).expect("model serializes")
    }

    /// Short content hash of the canonical model JSON.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Random valid models for property tests.
#[cfg(test)]
pub(crate) mod testing {
    use proptest::prelude::*;

    use super::IfsModel;

    /// Images laid out left to right on `[0, 1]` with positive gaps; the
    /// first and last maps fix `0` and `1`, so the hull is `[0, 1]`.
    pub fn layout(ratio_w: &[f64], total: f64, gap_w: &[f64], prob_w: &[f64]) -> IfsModel<f64> {
        let rs: f64 = ratio_w.iter().sum();
        let ratios: Vec<f64> = ratio_w.iter().map(|w| w * total / rs).collect();
        let gs: f64 = gap_w.iter().sum();
        let mut offsets = vec![0.0];
        for (r, g) in ratios.iter().zip(gap_w) {
            let last = *offsets.last().unwrap();
            offsets.push(last + r + g * (1.0 - total) / gs);
        }
        *offsets.last_mut().unwrap() = 1.0 - ratios.last().unwrap();
        let ps: f64 = prob_w.iter().sum();
        let probs: Vec<f64> = prob_w.iter().map(|w| w / ps).collect();
        IfsModel::from_parts(&ratios, &offsets, &probs).expect("layout is valid")
    }

    pub fn arb_model() -> impl Strategy<Value = IfsModel<f64>> {
        (2usize..=5)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(0.1f64..1.0, n),
                    0.3f64..0.95,
                    proptest::collection::vec(0.05f64..1.0, n - 1),
                    proptest::collection::vec(0.05f64..1.0, n),
                )
            })
            .prop_map(|(rw, total, gw, pw)| layout(&rw, total, &gw, &pw))
    }
}
