//! Submodular objectives behind a uniform value-oracle contract.
//!
//! A [`SetFunction`] is the pure mathematical object; a [`ValueOracle`] wraps
//! one with range checking, call accounting and optional tabulation. All
//! algorithms in this crate talk to objectives only through `ValueOracle`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Dense element identifier in `0..n`.
pub type ElementId = usize;

/// Largest ground set that can be tabulated or checked exhaustively.
pub const MAX_EXHAUSTIVE_N: usize = 22;

/// A non-negative set function over the ground set `0..ground_size()`.
///
/// `evaluate` receives distinct, in-range ids in arbitrary order and must
/// return the same value for every ordering of the same set.
pub trait SetFunction: Send + Sync + fmt::Debug {
    fn ground_size(&self) -> usize;

    fn evaluate(&self, set: &[ElementId]) -> f64;

    /// Same as `evaluate` for a bitmask set; only called when
    /// `ground_size() <= 64`.
    fn evaluate_mask(&self, mask: u64) -> f64 {
        let set: Vec<ElementId> = mask_elements(mask).collect();
        self.evaluate(&set)
    }

    fn kind(&self) -> &'static str;

    fn label(&self, id: ElementId) -> String {
        format!("e{id}")
    }
}

pub(crate) fn mask_elements(mut mask: u64) -> impl Iterator<Item = ElementId> {
    std::iter::from_fn(move || {
        if mask == 0 {
            return None;
        }
        let tz = mask.trailing_zeros() as usize;
        mask &= mask - 1;
        Some(tz)
    })
}

#[inline]
pub(crate) fn set_to_mask(set: &[ElementId]) -> u64 {
    set.iter().fold(0u64, |m, &e| m | (1u64 << e))
}

/// Weighted coverage: `f(S)` is the total weight of the universe items
/// covered by the union of the covers of `S`. Monotone.
#[derive(Clone, Debug)]
pub struct Coverage {
    universe_weights: Vec<f64>,
    covers: Vec<Vec<usize>>,
    cover_words: Vec<Vec<u64>>,
    words: usize,
}

impl Coverage {
    pub fn new(universe_weights: Vec<f64>, covers: Vec<Vec<usize>>) -> Result<Self> {
        if let Some(w) = universe_weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::input(format!("coverage weight {w} is not a finite non-negative number")));
        }
        let universe = universe_weights.len();
        let words = universe.div_ceil(64).max(1);
        let mut cover_words = Vec::with_capacity(covers.len());
        for (e, cover) in covers.iter().enumerate() {
            let mut bits = vec![0u64; words];
            for &item in cover {
                if item >= universe {
                    return Err(Error::input(format!(
                        "element {e} covers item {item} outside a universe of {universe}"
                    )));
                }
                bits[item / 64] |= 1u64 << (item % 64);
            }
            cover_words.push(bits);
        }
        Ok(Coverage { universe_weights, covers, cover_words, words })
    }

    pub fn universe_weights(&self) -> &[f64] {
        &self.universe_weights
    }

    pub fn covers(&self) -> &[Vec<usize>] {
        &self.covers
    }

    fn weight_of(&self, acc: &[u64]) -> f64 {
        let mut total = 0.0;
        for (wi, &word) in acc.iter().enumerate() {
            let mut word = word;
            while word != 0 {
                let tz = word.trailing_zeros() as usize;
                total += self.universe_weights[wi * 64 + tz];
                word &= word - 1;
            }
        }
        total
    }

    fn union<I: Iterator<Item = ElementId>>(&self, elements: I) -> f64 {
        if self.words == 1 {
            let acc = elements.fold(0u64, |acc, e| acc | self.cover_words[e][0]);
            return self.weight_of(&[acc]);
        }
        let mut acc = vec![0u64; self.words];
        for e in elements {
            for (a, b) in acc.iter_mut().zip(&self.cover_words[e]) {
                *a |= b;
            }
        }
        self.weight_of(&acc)
    }
}

impl SetFunction for Coverage {
    fn ground_size(&self) -> usize {
        self.covers.len()
    }

    fn evaluate(&self, set: &[ElementId]) -> f64 {
        self.union(set.iter().copied())
    }

    fn evaluate_mask(&self, mask: u64) -> f64 {
        self.union(mask_elements(mask))
    }

    fn kind(&self) -> &'static str {
        "coverage"
    }
}

/// Weighted graph cut: `f(S)` is the weight of edges with exactly one
/// endpoint in `S`. Non-negative, symmetric, non-monotone.
#[derive(Clone, Debug)]
pub struct Cut {
    n: usize,
    edges: Vec<(ElementId, ElementId, f64)>,
    adjacency: Vec<Vec<(ElementId, f64)>>,
}

impl Cut {
    pub fn new(n: usize, edges: Vec<(ElementId, ElementId, f64)>) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b, w) in &edges {
            if a >= n || b >= n {
                return Err(Error::input(format!("edge ({a}, {b}) leaves a ground set of {n}")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::input(format!("edge ({a}, {b}) has invalid weight {w}")));
            }
            if a == b {
                // Self-loops never cross a cut.
                continue;
            }
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        Ok(Cut { n, edges, adjacency })
    }

    pub fn edges(&self) -> &[(ElementId, ElementId, f64)] {
        &self.edges
    }

    fn crossing<I, F>(&self, members: I, contains: F) -> f64
    where
        I: Iterator<Item = ElementId>,
        F: Fn(ElementId) -> bool,
    {
        let mut total = 0.0;
        for u in members {
            for &(v, w) in &self.adjacency[u] {
                if !contains(v) {
                    total += w;
                }
            }
        }
        total
    }
}

impl SetFunction for Cut {
    fn ground_size(&self) -> usize {
        self.n
    }

    fn evaluate(&self, set: &[ElementId]) -> f64 {
        if self.n <= 64 {
            return self.evaluate_mask(set_to_mask(set));
        }
        let mut inside = vec![false; self.n];
        for &e in set {
            inside[e] = true;
        }
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        self.crossing(sorted.into_iter(), |v| inside[v])
    }

    fn evaluate_mask(&self, mask: u64) -> f64 {
        self.crossing(mask_elements(mask), |v| mask & (1u64 << v) != 0)
    }

    fn kind(&self) -> &'static str {
        "cut"
    }
}

/// Additive objective `f(S) = Σ_{u∈S} w_u` with non-negative weights.
#[derive(Clone, Debug)]
pub struct Modular {
    weights: Vec<f64>,
}

impl Modular {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::input(format!("modular weight {w} is not a finite non-negative number")));
        }
        Ok(Modular { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl SetFunction for Modular {
    fn ground_size(&self) -> usize {
        self.weights.len()
    }

    fn evaluate(&self, set: &[ElementId]) -> f64 {
        if self.weights.len() <= 64 {
            return self.evaluate_mask(set_to_mask(set));
        }
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        sorted.iter().map(|&e| self.weights[e]).sum()
    }

    fn evaluate_mask(&self, mask: u64) -> f64 {
        mask_elements(mask).map(|e| self.weights[e]).sum()
    }

    fn kind(&self) -> &'static str {
        "modular"
    }
}

/// The adversarial instance over `{u_1..u_{k-1}} ∪ {v_1..v_h} ∪ {w}`:
///
/// ```text
/// f(S) = |S|                    if w ∉ S
/// f(S) = k + |S ∩ {u_i}|        if w ∈ S
/// ```
///
/// Ids are laid out as `u_i = i - 1`, `v_j = k - 2 + j`, `w = k + h - 1`.
/// The optimum under `|S| ≤ k` is `{u_i} ∪ {w}` with value `2k - 1`.
#[derive(Clone, Debug)]
pub struct HardInstance {
    k: usize,
    h: usize,
}

/// Arrival order of the non-`w` elements; `w` always arrives last.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HardOrder {
    /// Uniformly random permutation drawn from the instance seed.
    #[default]
    Shuffled,
    UFirst,
    VFirst,
}

impl HardInstance {
    pub fn new(k: usize, h: usize) -> Result<Self> {
        if k < 1 || h < 1 {
            return Err(Error::input(format!("hard instance needs k >= 1 and h >= 1, got k={k}, h={h}")));
        }
        if k + h > 1 << 24 {
            return Err(Error::input("hard instance is too large"));
        }
        Ok(HardInstance { k, h })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// Id of `u_i`, `1 <= i <= k - 1`.
    pub fn u(&self, i: usize) -> ElementId {
        assert!((1..self.k).contains(&i), "u_{i} does not exist for k={}", self.k);
        i - 1
    }

    /// Id of `v_j`, `1 <= j <= h`.
    pub fn v(&self, j: usize) -> ElementId {
        assert!((1..=self.h).contains(&j), "v_{j} does not exist for h={}", self.h);
        self.k - 2 + j
    }

    pub fn w(&self) -> ElementId {
        self.k + self.h - 1
    }

    pub fn is_u(&self, e: ElementId) -> bool {
        e + 1 < self.k
    }

    /// Arrival order with `w` last.
    pub fn arrival_order(&self, order: HardOrder, seed: u64) -> Vec<ElementId> {
        let us = 0..self.k - 1;
        let vs = self.k - 1..self.k - 1 + self.h;
        let mut head: Vec<ElementId> = match order {
            HardOrder::UFirst => us.chain(vs).collect(),
            HardOrder::VFirst => vs.chain(us).collect(),
            HardOrder::Shuffled => us.chain(vs).collect(),
        };
        if order == HardOrder::Shuffled {
            head.shuffle(&mut seed::stream(seed, &[0x6861_7264]));
        }
        head.push(self.w());
        head
    }

    fn value_of(&self, size: usize, u_count: usize, has_w: bool) -> f64 {
        if has_w {
            (self.k + u_count) as f64
        } else {
            size as f64
        }
    }
}

impl SetFunction for HardInstance {
    fn ground_size(&self) -> usize {
        self.k + self.h
    }

    fn evaluate(&self, set: &[ElementId]) -> f64 {
        let w = self.w();
        let has_w = set.contains(&w);
        let u_count = set.iter().filter(|&&e| self.is_u(e)).count();
        self.value_of(set.len(), u_count, has_w)
    }

    fn evaluate_mask(&self, mask: u64) -> f64 {
        let has_w = mask & (1u64 << self.w()) != 0;
        let u_bits = if self.k > 1 { (1u64 << (self.k - 1)) - 1 } else { 0 };
        self.value_of(
            mask.count_ones() as usize,
            (mask & u_bits).count_ones() as usize,
            has_w,
        )
    }

    fn kind(&self) -> &'static str {
        "hard"
    }

    fn label(&self, id: ElementId) -> String {
        if id == self.w() {
            "w".to_string()
        } else if self.is_u(id) {
            format!("u{}", id + 1)
        } else {
            format!("v{}", id + 2 - self.k)
        }
    }
}

/// Value oracle with call accounting.
///
/// Every call to [`value`](Self::value) or [`value_mask`](Self::value_mask)
/// increments an atomic counter, so the oracle can be shared across threads.
/// When tabulated (see [`with_memo`](Self::with_memo)) lookups replace
/// evaluation but are still counted.
pub struct ValueOracle {
    function: Arc<dyn SetFunction>,
    calls: AtomicU64,
    table: Option<Arc<[f64]>>,
}

impl fmt::Debug for ValueOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValueOracle")
            .field("kind", &self.function.kind())
            .field("n", &self.ground_size())
            .field("calls", &self.calls())
            .field("memo", &self.table.is_some())
            .finish()
    }
}

impl ValueOracle {
    pub fn new<F: SetFunction + 'static>(function: F) -> Self {
        Self::from_arc(Arc::new(function))
    }

    pub fn from_arc(function: Arc<dyn SetFunction>) -> Self {
        ValueOracle { function, calls: AtomicU64::new(0), table: None }
    }

    /// Tabulates `f` over all `2^n` subsets. Off by default so that call
    /// counts mirror the algorithms' oracle usage; lookups are still counted.
    pub fn with_memo(mut self) -> Result<Self> {
        let n = self.ground_size();
        if n > MAX_EXHAUSTIVE_N {
            return Err(Error::Capacity {
                what: "memo table",
                required: 1u128 << n,
                limit: 1u128 << MAX_EXHAUSTIVE_N,
                hint: "",
            });
        }
        let table: Vec<f64> = (0..1u64 << n).map(|m| self.function.evaluate_mask(m)).collect();
        self.table = Some(table.into());
        Ok(self)
    }

    /// Same function and table with a fresh call counter.
    pub fn fork(&self) -> Self {
        ValueOracle {
            function: Arc::clone(&self.function),
            calls: AtomicU64::new(0),
            table: self.table.clone(),
        }
    }

    pub fn is_memoized(&self) -> bool {
        self.table.is_some()
    }

    pub fn ground_size(&self) -> usize {
        self.function.ground_size()
    }

    pub fn function(&self) -> &dyn SetFunction {
        self.function.as_ref()
    }

    pub fn shared_function(&self) -> Arc<dyn SetFunction> {
        Arc::clone(&self.function)
    }

    /// `f(S)`. `set` must hold distinct ids.
    pub fn value(&self, set: &[ElementId]) -> Result<f64> {
        let n = self.ground_size();
        if let Some(&bad) = set.iter().find(|&&e| e >= n) {
            return Err(Error::input(format!("element {bad} is outside the ground set 0..{n}")));
        }
        debug_assert!(is_distinct(set), "value() called with repeated elements: {set:?}");
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(match &self.table {
            Some(t) => t[set_to_mask(set) as usize],
            None => self.function.evaluate(set),
        })
    }

    /// `f(S)` for a bitmask set; requires `n <= 64`.
    pub fn value_mask(&self, mask: u64) -> Result<f64> {
        let n = self.ground_size();
        if n > 64 {
            return Err(Error::input(format!("bitmask sets need n <= 64, ground set has {n}")));
        }
        if n < 64 && mask >> n != 0 {
            return Err(Error::input(format!("mask {mask:#x} has bits outside 0..{n}")));
        }
        Ok(self.value_mask_unchecked(mask))
    }

    #[inline]
    pub(crate) fn value_mask_unchecked(&self, mask: u64) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        match &self.table {
            Some(t) => t[mask as usize],
            None => self.function.evaluate_mask(mask),
        }
    }

    /// `f(S ∪ {u}) - f(S)`; two oracle calls.
    pub fn marginal(&self, u: ElementId, set: &[ElementId]) -> Result<f64> {
        if set.contains(&u) {
            return Err(Error::input(format!("marginal of {u} requested for a set already containing it")));
        }
        let base = self.value(set)?;
        let mut with = Vec::with_capacity(set.len() + 1);
        with.extend_from_slice(set);
        with.push(u);
        Ok(self.value(&with)? - base)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

fn is_distinct(set: &[ElementId]) -> bool {
    let mut s = set.to_vec();
    s.sort_unstable();
    s.windows(2).all(|w| w[0] != w[1])
}

pub fn make_hard_instance(k: usize, h: usize) -> Result<ValueOracle> {
    Ok(ValueOracle::new(HardInstance::new(k, h)?))
}

pub fn make_coverage(universe_weights: Vec<f64>, covers: Vec<Vec<usize>>) -> Result<ValueOracle> {
    Ok(ValueOracle::new(Coverage::new(universe_weights, covers)?))
}

pub fn make_cut(n: usize, edges: Vec<(ElementId, ElementId, f64)>) -> Result<ValueOracle> {
    Ok(ValueOracle::new(Cut::new(n, edges)?))
}

pub fn make_modular(weights: Vec<f64>) -> Result<ValueOracle> {
    Ok(ValueOracle::new(Modular::new(weights)?))
}

/// Random coverage instance: each element covers each universe item
/// independently with probability `density`; weights are uniform in
/// `[min_weight, max_weight]`.
pub fn random_coverage<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    universe: usize,
    density: f64,
    (min_weight, max_weight): (f64, f64),
) -> Result<Coverage> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::input(format!("density {density} outside [0, 1]")));
    }
    if !(0.0 <= min_weight && min_weight <= max_weight) {
        return Err(Error::input("coverage weights need 0 <= min <= max"));
    }
    let weights: Vec<f64> = (0..universe).map(|_| rng.random_range(min_weight..=max_weight)).collect();
    let covers = (0..n)
        .map(|_| (0..universe).filter(|_| rng.random_bool(density)).collect())
        .collect();
    Coverage::new(weights, covers)
}

/// Erdős–Rényi graph with edge probability `edge_probability` and weights
/// uniform in `(0, max_weight]`.
pub fn random_cut<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    edge_probability: f64,
    max_weight: f64,
) -> Result<Cut> {
    if !(0.0..=1.0).contains(&edge_probability) {
        return Err(Error::input(format!("edge probability {edge_probability} outside [0, 1]")));
    }
    if max_weight.is_nan() || max_weight <= 0.0 {
        return Err(Error::input("cut max_weight must be positive"));
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(edge_probability) {
                let w = max_weight * (1.0 - rng.random::<f64>());
                edges.push((a, b, w));
            }
        }
    }
    Cut::new(n, edges)
}

/// A concrete failure of an exhaustive property check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Violation {
    Negative { set: Vec<ElementId>, value: f64 },
    /// `f(S+u) + f(S+v) < f(S+u+v) + f(S) - tol`.
    Submodularity { set: Vec<ElementId>, u: ElementId, v: ElementId, gap: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Negative { set, value } => write!(f, "f({set:?}) = {value} < 0"),
            Violation::Submodularity { set, u, v, gap } => write!(
                f,
                "diminishing returns fails at S={set:?}, u={u}, v={v} (gap {gap:e})"
            ),
        }
    }
}

fn exhaustive_table(oracle: &ValueOracle) -> Result<Vec<f64>> {
    let n = oracle.ground_size();
    if n > MAX_EXHAUSTIVE_N {
        return Err(Error::Capacity {
            what: "exhaustive check",
            required: 1u128 << n,
            limit: 1u128 << MAX_EXHAUSTIVE_N,
            hint: "",
        });
    }
    (0..1u64 << n).map(|m| oracle.value_mask(m)).collect()
}

/// Checks `f(S) >= 0` on every subset.
pub fn check_non_negative(oracle: &ValueOracle) -> Result<Option<Violation>> {
    let table = exhaustive_table(oracle)?;
    Ok(table.iter().enumerate().find(|(_, v)| **v < 0.0).map(|(m, &value)| {
        Violation::Negative { set: mask_elements(m as u64).collect(), value }
    }))
}

/// Checks submodularity through the equivalent local condition
/// `f(S+u) + f(S+v) >= f(S+u+v) + f(S)` for all `S` and `u, v ∉ S`.
pub fn check_submodular(oracle: &ValueOracle, tol: f64) -> Result<Option<Violation>> {
    let n = oracle.ground_size();
    let table = exhaustive_table(oracle)?;
    for s in 0..1u64 << n {
        for u in (0..n).filter(|&u| s & (1 << u) == 0) {
            for v in (u + 1..n).filter(|&v| s & (1 << v) == 0) {
                let (su, sv, suv) = (s | 1 << u, s | 1 << v, s | 1 << u | 1 << v);
                let gap = table[su as usize] + table[sv as usize]
                    - table[suv as usize]
                    - table[s as usize];
                if gap < -tol {
                    return Ok(Some(Violation::Submodularity {
                        set: mask_elements(s).collect(),
                        u,
                        v,
                        gap,
                    }));
                }
            }
        }
    }
    Ok(None)
}
