//! Continuous extensions of a set function.
//!
//! For `x ∈ [0,1]^N`, `R(x)` is the random set containing each `u`
//! independently with probability `x_u`. The multilinear extension is
//! `F(x) = E[f(R(x))]`; the Lovász extension is `f̂(x) = ∫₀¹ f(T_λ(x)) dλ`
//! with `T_λ(x) = {u : x_u ≥ λ}`. For submodular `f`, `F ≥ f̂`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{ElementId, ValueOracle};
use crate::seed;

/// Default bound on the number of strictly fractional coordinates that exact
/// evaluation will enumerate (`2^20` subsets).
pub const DEFAULT_EXACT_CAP: usize = 20;

const L1_TOLERANCE: f64 = 1e-12;

/// Sparse point of `[0,1]^N`.
///
/// Only non-zero coordinates are stored, so the stored keys are exactly
/// `supp(x)`. The L1 norm is cached.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FractionalVector {
    coords: BTreeMap<ElementId, f64>,
    l1: f64,
}

impl FractionalVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Characteristic vector `1_S`.
    pub fn indicator(set: &[ElementId]) -> Self {
        let mut x = Self::new();
        for &e in set {
            x.coords.insert(e, 1.0);
        }
        x.refresh_l1();
        x
    }

    pub fn from_pairs<I: IntoIterator<Item = (ElementId, f64)>>(pairs: I) -> Result<Self> {
        let mut x = Self::new();
        for (e, v) in pairs {
            x.set(e, v)?;
        }
        Ok(x)
    }

    /// Sets `x_e = value`; zero removes `e` from the support.
    pub fn set(&mut self, e: ElementId, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::input(format!("coordinate {e} = {value} is outside [0, 1]")));
        }
        if value == 0.0 {
            self.coords.remove(&e);
        } else {
            self.coords.insert(e, value);
        }
        self.refresh_l1();
        Ok(())
    }

    fn refresh_l1(&mut self) {
        self.l1 = self.coords.values().sum();
    }

    pub fn get(&self, e: ElementId) -> f64 {
        self.coords.get(&e).copied().unwrap_or(0.0)
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn support(&self) -> Vec<ElementId> {
        self.coords.keys().copied().collect()
    }

    pub fn support_len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn contains(&self, e: ElementId) -> bool {
        self.coords.contains_key(&e)
    }

    /// `(id, x_id)` pairs in increasing id order.
    pub fn iter(&self) -> impl Iterator<Item = (ElementId, f64)> + '_ {
        self.coords.iter().map(|(&e, &v)| (e, v))
    }

    pub fn max_coordinate(&self) -> f64 {
        self.coords.values().copied().fold(0.0, f64::max)
    }

    pub fn is_integral(&self) -> bool {
        self.coords.values().all(|&v| v == 1.0)
    }

    /// `x ∨ 1_u`.
    pub fn join_unit(&self, u: ElementId) -> Self {
        let mut y = self.clone();
        y.coords.insert(u, 1.0);
        y.refresh_l1();
        y
    }

    /// `x ∧ 1_{N∖{u}}`.
    pub fn without(&self, u: ElementId) -> Self {
        let mut y = self.clone();
        if y.coords.remove(&u).is_some() {
            y.refresh_l1();
        }
        y
    }

    /// Coordinate-wise sum; fails if a coordinate would exceed 1.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        let mut y = self.clone();
        for (e, v) in other.iter() {
            y.set(e, y.get(e) + v)?;
        }
        Ok(y)
    }

    fn split(&self) -> (Vec<ElementId>, Vec<(ElementId, f64)>) {
        let mut ones = Vec::new();
        let mut fractional = Vec::new();
        for (e, v) in self.iter() {
            if v >= 1.0 {
                ones.push(e);
            } else {
                fractional.push((e, v));
            }
        }
        (ones, fractional)
    }

    pub(crate) fn fractional_count(&self) -> usize {
        self.coords.values().filter(|&&v| v < 1.0).count()
    }

    pub(crate) fn l1_matches_cache(&self) -> bool {
        (self.coords.values().sum::<f64>() - self.l1).abs() <= L1_TOLERANCE
    }
}

/// Draws `R(x)`.
pub fn sample_set<R: Rng + ?Sized>(x: &FractionalVector, rng: &mut R) -> Vec<ElementId> {
    x.iter().filter(|&(_, p)| rng.random::<f64>() < p).map(|(e, _)| e).collect()
}

#[inline]
fn sample_mask<R: Rng + ?Sized>(base: u64, fractional: &[(ElementId, f64)], rng: &mut R) -> u64 {
    fractional
        .iter()
        .fold(base, |m, &(e, p)| if rng.random::<f64>() < p { m | 1u64 << e } else { m })
}

fn capacity(required_exponent: usize, cap: usize) -> Error {
    Error::Capacity {
        what: "exact multilinear evaluation",
        required: 1u128.checked_shl(required_exponent as u32).unwrap_or(u128::MAX),
        limit: 1u128 << cap.min(127),
        hint: "; use the sampled estimator instead",
    }
}

/// `(probability, mask)` for every subset of `coords`, in binary counting order.
fn subset_table(coords: &[(ElementId, f64)]) -> (Vec<f64>, Vec<u64>) {
    let mut probs = vec![1.0];
    let mut masks = vec![0u64];
    for &(e, p) in coords {
        let len = probs.len();
        for i in 0..len {
            probs.push(probs[i] * p);
            masks.push(masks[i] | 1u64 << e);
            probs[i] *= 1.0 - p;
        }
    }
    (probs, masks)
}

/// Exact `F(x)` by enumerating the subsets of the fractional part of
/// `supp(x)`; coordinates equal to 1 are always included.
///
/// Costs `2^m` oracle calls for `m` fractional coordinates; errors when
/// `m > cap`.
pub fn multilinear_exact(oracle: &ValueOracle, x: &FractionalVector, cap: usize) -> Result<f64> {
    let (ones, fractional) = x.split();
    let m = fractional.len();
    if m > cap {
        return Err(capacity(m, cap));
    }
    let n = oracle.ground_size();
    if let Some(&(e, _)) = fractional.iter().find(|(e, _)| *e >= n) {
        return Err(Error::input(format!("coordinate {e} is outside the ground set 0..{n}")));
    }
    if let Some(&e) = ones.iter().find(|&&e| e >= n) {
        return Err(Error::input(format!("coordinate {e} is outside the ground set 0..{n}")));
    }
    if n <= 64 {
        // Meet in the middle: the low half varies fastest.
        let base: u64 = ones.iter().fold(0, |m, &e| m | 1u64 << e);
        let (lo, hi) = fractional.split_at(m / 2);
        let (p_lo, m_lo) = subset_table(lo);
        let (p_hi, m_hi) = subset_table(hi);
        let mut total = 0.0;
        for (&ph, &mh) in p_hi.iter().zip(&m_hi) {
            let mut inner = 0.0;
            for (&pl, &ml) in p_lo.iter().zip(&m_lo) {
                inner += pl * oracle.value_mask_unchecked(base | mh | ml);
            }
            total += ph * inner;
        }
        return Ok(total);
    }
    let mut set = Vec::with_capacity(ones.len() + m);
    let mut total = 0.0;
    for mask in 0..1u64 << m {
        set.clear();
        set.extend_from_slice(&ones);
        let mut prob = 1.0;
        for (bit, &(e, p)) in fractional.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                set.push(e);
                prob *= p;
            } else {
                prob *= 1.0 - p;
            }
        }
        total += prob * oracle.value(&set)?;
    }
    Ok(total)
}

/// Exact `∂_u F(x) = F(x ∨ 1_u) − F(x ∧ 1_{N∖{u}})`.
pub fn partial_derivative_exact(
    oracle: &ValueOracle,
    x: &FractionalVector,
    u: ElementId,
    cap: usize,
) -> Result<f64> {
    if u >= oracle.ground_size() {
        return Err(Error::input(format!("element {u} is outside the ground set")));
    }
    let up = multilinear_exact(oracle, &x.join_unit(u), cap)?;
    let down = multilinear_exact(oracle, &x.without(u), cap)?;
    Ok(up - down)
}

/// Number of samples per derivative estimate at arrival `i`:
///
/// `ℓ = ⌈4800 (1/p + 1)² k² / [ε′(1−ε′)]² · ln(80 i² / ε′)⌉`.
///
/// This is the unscaled count; callers apply any desk-scale factor.
/// Values beyond `u64::MAX` saturate.
pub fn sample_count(p: f64, k: usize, eps_prime: f64, i: usize) -> Result<u64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::input(format!("p = {p} must lie in (0, 1)")));
    }
    if !(eps_prime > 0.0 && eps_prime < 1.0) {
        return Err(Error::input(format!("eps' = {eps_prime} must lie in (0, 1)")));
    }
    if k < 1 || i < 1 {
        return Err(Error::input(format!("k = {k} and i = {i} must be at least 1")));
    }
    let k = k as f64;
    let i = i as f64;
    let spread = (1.0 / p + 1.0).powi(2) * k * k;
    let accuracy = (eps_prime * (1.0 - eps_prime)).powi(2);
    let confidence = (80.0 * i * i / eps_prime).ln();
    Ok((4800.0 * spread / accuracy * confidence).ceil() as u64)
}

/// Output of the sampled derivative estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivativeEstimate {
    pub mean: f64,
    /// Unbiased sample variance of the individual differences (0 when
    /// `samples == 1` or the draw is deterministic).
    pub variance: f64,
    pub samples: u64,
    /// `R(x)` had no randomness, so one draw was evaluated for all samples.
    pub deterministic: bool,
}

/// Mean of `samples` draws of `f(R(x) ∪ {u}) − f(R(x) ∖ {u})`.
///
/// Sample `t` uses the stream `derive_seed(seed, [t])`, so the result is a
/// pure function of `(x, u, samples, seed)`. When `x` has no strictly
/// fractional coordinate every draw is identical and only one is evaluated.
pub fn estimate_partial_derivative(
    oracle: &ValueOracle,
    x: &FractionalVector,
    u: ElementId,
    samples: u64,
    seed: u64,
) -> Result<DerivativeEstimate> {
    if samples < 1 {
        return Err(Error::input("the estimator needs at least one sample"));
    }
    let n = oracle.ground_size();
    if u >= n || x.iter().any(|(e, _)| e >= n) {
        return Err(Error::input("estimator arguments reference elements outside the ground set"));
    }
    let (ones, fractional) = x.split();
    if fractional.is_empty() {
        let without: Vec<ElementId> = ones.iter().copied().filter(|&e| e != u).collect();
        let mut with = without.clone();
        with.push(u);
        let mean = oracle.value(&with)? - oracle.value(&without)?;
        return Ok(DerivativeEstimate { mean, variance: 0.0, samples, deterministic: true });
    }

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    if n <= 64 {
        let base: u64 = ones.iter().fold(0, |m, &e| m | 1u64 << e);
        for t in 0..samples {
            let mut rng = seed::fast_stream(seed::derive_seed(seed, &[t]));
            let r = sample_mask(base, &fractional, &mut rng) & !(1u64 << u);
            let d = oracle.value_mask_unchecked(r | 1u64 << u) - oracle.value_mask_unchecked(r);
            sum += d;
            sum_sq += d * d;
        }
    } else {
        let mut set = Vec::new();
        for t in 0..samples {
            let mut rng = seed::fast_stream(seed::derive_seed(seed, &[t]));
            set.clear();
            set.extend_from_slice(&ones);
            set.extend(fractional.iter().filter(|&&(_, p)| rng.random::<f64>() < p).map(|&(e, _)| e));
            set.retain(|&e| e != u);
            let base = oracle.value(&set)?;
            set.push(u);
            let d = oracle.value(&set)? - base;
            sum += d;
            sum_sq += d * d;
        }
    }
    let count = samples as f64;
    let mean = sum / count;
    let variance = if samples > 1 {
        ((sum_sq - count * mean * mean) / (count - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(DerivativeEstimate { mean, variance, samples, deterministic: false })
}

/// Monte-Carlo estimate of `F(x)` from `samples` draws of `R(x)`.
pub fn multilinear_sampled(
    oracle: &ValueOracle,
    x: &FractionalVector,
    samples: u64,
    seed: u64,
) -> Result<f64> {
    if samples < 1 {
        return Err(Error::input("the estimator needs at least one sample"));
    }
    let mut total = 0.0;
    for t in 0..samples {
        let mut rng = seed::fast_stream(seed::derive_seed(seed, &[t]));
        total += oracle.value(&sample_set(x, &mut rng))?;
    }
    Ok(total / samples as f64)
}

/// Exact Lovász extension.
///
/// With distinct positive levels `v_1 > ... > v_r` and `v_{r+1} = 0`,
/// `f̂(x) = (1 − v_1) f(∅) + Σ_j (v_j − v_{j+1}) f({u : x_u ≥ v_j})`.
/// At most `|supp(x)| + 1` oracle calls.
pub fn lovasz(oracle: &ValueOracle, x: &FractionalVector) -> Result<f64> {
    let mut entries: Vec<(ElementId, f64)> = x.iter().collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut total = 0.0;
    let top = entries.first().map_or(0.0, |e| e.1);
    if top < 1.0 {
        total += (1.0 - top) * oracle.value(&[])?;
    }
    let mut level_set: Vec<ElementId> = Vec::with_capacity(entries.len());
    let mut idx = 0;
    while idx < entries.len() {
        let level = entries[idx].1;
        while idx < entries.len() && entries[idx].1 == level {
            level_set.push(entries[idx].0);
            idx += 1;
        }
        let next = entries.get(idx).map_or(0.0, |e| e.1);
        total += (level - next) * oracle.value(&level_set)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_coverage, make_cut, make_modular};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_covers() -> ValueOracle {
        make_coverage(vec![1.0; 4], vec![vec![1, 2], vec![2, 3]]).unwrap()
    }

    fn fv(pairs: &[(ElementId, f64)]) -> FractionalVector {
        FractionalVector::from_pairs(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn vector_support_and_norm() {
        let mut x = fv(&[(3, 0.25), (1, 0.5)]);
        assert_eq!(x.support(), vec![1, 3]);
        assert_eq!(x.l1(), 0.75);
        x.set(3, 0.0).unwrap();
        assert_eq!(x.support(), vec![1]);
        assert!(x.set(2, 1.5).is_err());
        assert!(x.set(2, -0.1).is_err());
        assert!(x.l1_matches_cache());
        assert_eq!(x.join_unit(4).get(4), 1.0);
        assert_eq!(x.without(1).support_len(), 0);
    }

    #[test]
    fn sampling_degenerate_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zero = FractionalVector::new();
        let ones = FractionalVector::indicator(&[2, 5]);
        for _ in 0..100 {
            assert!(sample_set(&zero, &mut rng).is_empty());
            assert_eq!(sample_set(&ones, &mut rng), vec![2, 5]);
        }
    }

    #[test]
    fn sampling_frequency_matches_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = fv(&[(0, 0.5)]);
        let hits = (0..100_000).filter(|_| !sample_set(&x, &mut rng).is_empty()).count();
        let freq = hits as f64 / 1e5;
        assert!((freq - 0.5).abs() <= 0.01, "frequency {freq}");
    }

    #[test]
    fn multilinear_examples() {
        let f = two_covers();
        assert_eq!(multilinear_exact(&f, &FractionalVector::indicator(&[0, 1]), 20).unwrap(), 3.0);
        let x = fv(&[(0, 0.6), (1, 0.3)]);
        assert!((multilinear_exact(&f, &x, 20).unwrap() - 1.62).abs() < 1e-12);
        let edge = make_cut(2, vec![(0, 1, 1.0)]).unwrap();
        let half = fv(&[(0, 0.5), (1, 0.5)]);
        assert!((multilinear_exact(&edge, &half, 20).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn multilinear_respects_cap() {
        let f = make_modular(vec![1.0; 30]).unwrap();
        let x = FractionalVector::from_pairs((0..21).map(|e| (e, 0.5))).unwrap();
        assert!(matches!(multilinear_exact(&f, &x, 20), Err(Error::Capacity { .. })));
        // Integral coordinates do not count towards the cap.
        let y = FractionalVector::indicator(&(0..25).collect::<Vec<_>>());
        assert_eq!(multilinear_exact(&f, &y, 20).unwrap(), 25.0);
    }

    #[test]
    fn derivative_examples() {
        let f = two_covers();
        let zero = FractionalVector::new();
        assert_eq!(partial_derivative_exact(&f, &zero, 1, 20).unwrap(), 2.0);
        let edge = make_cut(2, vec![(0, 1, 1.0)]).unwrap();
        let x = fv(&[(1, 0.5)]);
        assert!((partial_derivative_exact(&edge, &x, 0, 20).unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn sample_count_matches_direct_arithmetic() {
        // 4800 · 9 · 1 / 0.0625 = 691200; ln(80 / 0.5) = ln 160.
        let direct = (691200.0f64 * 160f64.ln()).ceil() as u64;
        assert_eq!(direct, 3_507_961);
        assert_eq!(sample_count(0.5, 1, 0.5, 1).unwrap(), direct);
        assert!(sample_count(0.24, 10, 1e-4, 1).unwrap() > 1_000_000_000_000_000);
        assert!(sample_count(0.3, 4, 0.2, 2).unwrap() >= sample_count(0.3, 4, 0.2, 1).unwrap());
        assert!(sample_count(1.0, 1, 0.5, 1).is_err());
        assert!(sample_count(0.5, 0, 0.5, 1).is_err());
        assert!(sample_count(0.5, 1, 0.0, 1).is_err());
        assert!(sample_count(0.5, 1, 0.5, 0).is_err());
    }

    #[test]
    fn estimator_is_exact_on_degenerate_points() {
        let f = two_covers();
        let e = estimate_partial_derivative(&f, &FractionalVector::new(), 1, 1000, 3).unwrap();
        assert_eq!(e.mean, 2.0);
        assert!(e.deterministic);
        let e = estimate_partial_derivative(&f, &FractionalVector::indicator(&[0]), 1, 7, 3).unwrap();
        assert_eq!(e.mean, f.value(&[0, 1]).unwrap() - f.value(&[0]).unwrap());
        assert!(estimate_partial_derivative(&f, &FractionalVector::new(), 1, 0, 3).is_err());
    }

    #[test]
    fn estimator_is_reproducible() {
        let f = two_covers();
        let x = fv(&[(0, 0.4)]);
        let a = estimate_partial_derivative(&f, &x, 1, 500, 9).unwrap();
        let b = estimate_partial_derivative(&f, &x, 1, 500, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lovasz_examples() {
        let f = two_covers();
        assert_eq!(lovasz(&f, &FractionalVector::indicator(&[1])).unwrap(), 2.0);
        let x = fv(&[(0, 0.6), (1, 0.3)]);
        let l = lovasz(&f, &x).unwrap();
        assert!((l - 1.5).abs() < 1e-12);
        assert!(l <= multilinear_exact(&f, &x, 20).unwrap());
    }

    #[test]
    fn lovasz_call_budget() {
        let f = two_covers();
        let x = fv(&[(0, 0.6), (1, 0.3)]);
        f.reset_calls();
        lovasz(&f, &x).unwrap();
        assert!(f.calls() <= 3);
    }

    #[test]
    fn sampled_multilinear_is_close() {
        let f = two_covers();
        let x = fv(&[(0, 0.6), (1, 0.3)]);
        let est = multilinear_sampled(&f, &x, 50_000, 1).unwrap();
        assert!((est - 1.62).abs() < 0.03, "{est}");
    }
}
