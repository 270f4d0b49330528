//! Multilinear threshold streaming.
//!
//! Three entry points share one acceptance rule: when `u` arrives and
//! `∂_u F(x) ≥ c·τ/k`, add `min{p, k − |x|_1}` of `u` to `x`.
//!
//! - [`run_known_tau`] keeps a single fractional solution for a given `τ`.
//! - [`run_auto_tau`] keeps one solution per `τ` in the geometric grid
//!   `T = {(1+ε′)^h : m/(1+ε′) ≤ (1+ε′)^h ≤ mk/c}`, where `m` is the largest
//!   singleton (or empty-set) value seen so far, using exact derivatives.
//! - [`run_sampled`] is the same as `run_auto_tau` but estimates every
//!   derivative from `ℓ_i · sample_scale` samples of `f(R(x)∪{u}) − f(R(x))`.
//!
//! After the pass every fractional solution is swap-rounded into `S1`, the
//! offline solver picks `S2 ⊆ supp(x)`, and the best set overall is returned.
//!
//! # Grid storage
//!
//! The per-`τ` solutions are kept as maximal runs of consecutive grid
//! exponents whose solutions are identical ([`GridBlock`]). Acceptance is
//! monotone in `τ`, so an arrival splits a block into at most two. This is
//! exactly the per-`τ` algorithm, but a grid with tens of thousands of
//! thresholds only costs as many derivative evaluations as there are
//! distinct solutions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extensions::{
    estimate_partial_derivative, multilinear_exact, partial_derivative_exact, sample_count,
    FractionalVector, DEFAULT_EXACT_CAP,
};
use crate::objectives::{ElementId, ValueOracle};
use crate::offline::{self, OfflineMode, OfflineSolution, DEFAULT_MAX_SUBSETS};
use crate::rounding::swap_round;
use crate::seed::{self, tag};

/// Slack used when deciding that `|x|_1` has reached `k` and when snapping a
/// clamped increment back to `p`.
const NORM_TOLERANCE: f64 = 1e-12;

/// Refuse estimates that would take longer than any desk-scale run.
pub const MAX_SAMPLES_PER_ESTIMATE: u64 = 100_000_000;

/// Default offline ratio for the polynomial-time configuration.
pub const RANDOM_GREEDY_ALPHA: f64 = 0.460675;

/// `c = α(1−p) / (2α + (1−p)²)`, always in `(0, 1/2]`.
pub fn choose_c(alpha: f64, p: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::input(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::input(format!("p = {p} must lie in (0, 1)")));
    }
    let q = 1.0 - p;
    Ok(alpha * q / (2.0 * alpha + q * q))
}

/// Guaranteed fraction of `τ` achieved in expectation by the known-`τ`
/// algorithm when `c` is chosen by [`choose_c`] and `τ ≤ f(OPT)`.
pub fn known_tau_guarantee(alpha: f64, p: f64) -> Result<f64> {
    choose_c(alpha, p)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    #[default]
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SieveParams {
    pub k: usize,
    /// Fraction added per accepted element.
    pub p: f64,
    /// Threshold coefficient.
    pub c: f64,
    /// Offline ratio assumed for `S2`.
    pub alpha: f64,
    /// Grid granularity; unused by `run_known_tau` in exact mode.
    pub eps_prime: f64,
    pub offline: OfflineMode,
    /// Multiplier applied to the sample count `ℓ_i`.
    pub sample_scale: f64,
    /// How `run_known_tau` evaluates derivatives.
    pub derivative: DerivativeMode,
    /// Largest fractional support evaluated exactly.
    pub exact_cap: usize,
    /// Samples used when an exact derivative is over the cap.
    pub fallback_samples: u64,
    pub max_subsets: u64,
    /// Record exact-vs-estimated derivatives when exact evaluation is affordable.
    pub monitor_estimates: bool,
    /// Compute `F(x̂)` of every final solution for diagnostics.
    pub diagnose_multilinear: bool,
}

impl SieveParams {
    /// Parameters with `c` chosen from `(alpha, p)` and brute-force `S2`.
    pub fn new(k: usize, p: f64, alpha: f64, eps_prime: f64) -> Result<Self> {
        let params = SieveParams {
            k,
            p,
            c: choose_c(alpha, p)?,
            alpha,
            eps_prime,
            offline: OfflineMode::BruteForce,
            sample_scale: 1.0,
            derivative: DerivativeMode::Exact,
            exact_cap: DEFAULT_EXACT_CAP,
            fallback_samples: 10_000,
            max_subsets: DEFAULT_MAX_SUBSETS as u64,
            monitor_estimates: false,
            diagnose_multilinear: true,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_c(mut self, c: f64) -> Result<Self> {
        self.c = c;
        self.validate()?;
        Ok(self)
    }

    pub fn with_offline(mut self, offline: OfflineMode) -> Self {
        self.offline = offline;
        self
    }

    pub fn with_sample_scale(mut self, scale: f64) -> Result<Self> {
        self.sample_scale = scale;
        self.validate()?;
        Ok(self)
    }

    pub fn with_derivative(mut self, mode: DerivativeMode) -> Self {
        self.derivative = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::input("k must be at least 1"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::input(format!("p = {} must lie in (0, 1)", self.p)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::input(format!("c = {} must be positive", self.c)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::input(format!("alpha = {} must lie in (0, 1]", self.alpha)));
        }
        if !(self.eps_prime > 0.0 && self.eps_prime < 1.0) {
            return Err(Error::input(format!("eps' = {} must lie in (0, 1)", self.eps_prime)));
        }
        if !(self.sample_scale > 0.0 && self.sample_scale <= 1.0) {
            return Err(Error::input(format!("sample_scale = {} must lie in (0, 1]", self.sample_scale)));
        }
        if self.fallback_samples < 1 {
            return Err(Error::input("fallback_samples must be at least 1"));
        }
        Ok(())
    }

    /// Acceptance threshold `c·τ/k`.
    #[inline]
    pub fn threshold(&self, tau: f64) -> f64 {
        self.c * tau / self.k as f64
    }

    /// `⌈k/p⌉`: the most elements a single fractional solution can hold.
    pub fn max_support(&self) -> usize {
        (self.k as f64 / self.p - NORM_TOLERANCE).ceil() as usize
    }

    /// Grid-size bound `1 + (1 + ln k − ln c) / ln(1+ε′)`.
    pub fn grid_size_bound(&self) -> f64 {
        1.0 + (1.0 + (self.k as f64).ln() - self.c.ln()) / (1.0 + self.eps_prime).ln()
    }

    /// Scaled sample count for arrival `i` (1-based), at least 1.
    pub fn samples_at(&self, i: usize) -> Result<u64> {
        let full = sample_count(self.p, self.k, self.eps_prime, i)?;
        Ok(((full as f64 * self.sample_scale).ceil() as u64).max(1))
    }
}

/// Largest `sample_scale` keeping every arrival `i ≤ n` at or below `budget`
/// samples.
pub fn scale_for_budget(p: f64, k: usize, eps_prime: f64, n: usize, budget: u64) -> Result<f64> {
    if budget < 1 {
        return Err(Error::input("sample budget must be at least 1"));
    }
    let full = sample_count(p, k, eps_prime, n.max(1))? as f64;
    Ok((budget as f64 / full * (1.0 - 1e-12)).min(1.0))
}

/// `(1+ε′)^h`.
#[inline]
pub fn grid_value(eps_prime: f64, h: i64) -> f64 {
    (1.0 + eps_prime).powi(h as i32)
}

/// Inclusive exponent range of `{h : m/(1+ε′) ≤ (1+ε′)^h ≤ mk/c}`, or
/// `None` when empty. Logarithms give a first guess that is then corrected
/// by direct comparison.
pub fn grid_bounds(m: f64, eps_prime: f64, k: usize, c: f64) -> Option<(i64, i64)> {
    if !(m > 0.0 && m.is_finite()) {
        return None;
    }
    let base = 1.0 + eps_prime;
    let lower = m / base;
    let upper = m * k as f64 / c;
    let ln_base = base.ln();

    let mut lo = (lower.ln() / ln_base).ceil() as i64;
    while grid_value(eps_prime, lo) < lower {
        lo += 1;
    }
    while grid_value(eps_prime, lo - 1) >= lower {
        lo -= 1;
    }
    let mut hi = (upper.ln() / ln_base).floor() as i64;
    while grid_value(eps_prime, hi) > upper {
        hi -= 1;
    }
    while grid_value(eps_prime, hi + 1) <= upper {
        hi += 1;
    }
    (lo <= hi).then_some((lo, hi))
}

/// The grid `T` for a given running maximum `m`, in increasing order.
pub fn threshold_grid(m: f64, eps_prime: f64, k: usize, c: f64) -> Vec<f64> {
    grid_bounds(m, eps_prime, k, c)
        .map(|(lo, hi)| (lo..=hi).map(|h| grid_value(eps_prime, h)).collect())
        .unwrap_or_default()
}

/// Adds `min{p, k − |x|_1}` of `u`. Returns whether `x` changed.
fn add_fraction(
    x: &mut FractionalVector,
    saturated: &mut bool,
    u: ElementId,
    p: f64,
    k: usize,
) -> Result<bool> {
    if *saturated {
        return Ok(false);
    }
    let room = k as f64 - x.l1();
    let amount = if room >= p - NORM_TOLERANCE { p } else { room };
    if amount <= NORM_TOLERANCE {
        *saturated = true;
        return Ok(false);
    }
    x.set(u, amount)?;
    if x.l1() >= k as f64 - NORM_TOLERANCE {
        *saturated = true;
    }
    Ok(true)
}

/// Structural invariant of every fractional solution: all non-zero
/// coordinates equal `p` except at most one, and a differing coordinate
/// only exists once `|x|_1 = k`. The support never exceeds `⌈k/p⌉`.
pub fn check_structure(x: &FractionalVector, saturated: bool, p: f64, k: usize) -> Result<()> {
    let odd: Vec<(ElementId, f64)> = x.iter().filter(|&(_, v)| v != p).collect();
    if odd.len() > 1 {
        return Err(Error::Invariant(format!(
            "{} coordinates differ from p = {p}: {odd:?}",
            odd.len()
        )));
    }
    let full = x.l1() >= k as f64 - NORM_TOLERANCE;
    if !odd.is_empty() && !full {
        return Err(Error::Invariant(format!(
            "residual coordinate {odd:?} with |x|_1 = {} < k = {k}",
            x.l1()
        )));
    }
    if saturated != full {
        return Err(Error::Invariant(format!(
            "saturation flag {saturated} disagrees with |x|_1 = {} (k = {k})",
            x.l1()
        )));
    }
    let bound = (k as f64 / p - NORM_TOLERANCE).ceil() as usize;
    if x.support_len() > bound {
        return Err(Error::Invariant(format!(
            "{} stored elements exceed ⌈k/p⌉ = {bound}",
            x.support_len()
        )));
    }
    if !x.l1_matches_cache() {
        return Err(Error::Invariant("cached L1 norm is stale".into()));
    }
    Ok(())
}

/// Fractional solution of the known-`τ` algorithm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdState {
    pub tau: f64,
    x: FractionalVector,
    saturated: bool,
}

impl ThresholdState {
    pub fn new(tau: f64) -> Self {
        ThresholdState { tau, x: FractionalVector::new(), saturated: false }
    }

    pub fn x(&self) -> &FractionalVector {
        &self.x
    }

    /// Elements retained for the final solutions: `supp(x)`.
    pub fn stored(&self) -> Vec<ElementId> {
        self.x.support()
    }

    /// `|x|_1 = k`; no further element can be added.
    pub fn is_saturated(&self) -> bool {
        self.saturated
    }

    /// One acceptance step with a precomputed derivative. The comparison is
    /// the inclusive `derivative ≥ c·τ/k`. Returns whether `u` was added.
    pub fn process_element(&mut self, u: ElementId, derivative: f64, params: &SieveParams) -> Result<bool> {
        if self.x.contains(u) {
            return Err(Error::input(format!("element {u} arrived twice")));
        }
        if self.saturated || derivative < params.threshold(self.tau) {
            return Ok(false);
        }
        let changed = add_fraction(&mut self.x, &mut self.saturated, u, params.p, params.k)?;
        check_structure(&self.x, self.saturated, params.p, params.k)?;
        Ok(changed)
    }
}

/// A maximal run `lo..=hi` of grid exponents sharing one fractional solution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridBlock {
    pub lo: i64,
    pub hi: i64,
    pub x: FractionalVector,
    pub saturated: bool,
}

impl GridBlock {
    fn empty(lo: i64, hi: i64) -> Self {
        GridBlock { lo, hi, x: FractionalVector::new(), saturated: false }
    }

    pub fn width(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    fn same_solution(&self, other: &Self) -> bool {
        self.saturated == other.saturated && self.x == other.x
    }
}

/// One monitored derivative estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub arrival: usize,
    pub element: ElementId,
    /// Smallest and largest `τ` sharing the estimated solution.
    pub tau_range: (f64, f64),
    pub estimate: f64,
    pub exact: f64,
    pub samples: u64,
}

/// Summary of one fractional solution after the pass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinalState {
    /// Grid exponents sharing this solution; `None` for the known-`τ` run.
    pub exponents: Option<(i64, i64)>,
    pub tau_range: (f64, f64),
    pub x: FractionalVector,
    pub saturated: bool,
    /// `F(x̂)` when affordable and requested.
    pub multilinear: Option<f64>,
    pub s1: Vec<ElementId>,
    pub s1_value: f64,
    pub s2: Vec<ElementId>,
    pub s2_value: f64,
}

impl FinalState {
    pub fn best_value(&self) -> f64 {
        self.s1_value.max(self.s2_value)
    }

    pub fn thresholds(&self) -> usize {
        self.exponents.map_or(1, |(lo, hi)| (hi - lo + 1) as usize)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunDiagnostics {
    /// `f` of the returned set.
    pub value: f64,
    /// Final running maximum (grid variants) or `f(∅)`.
    pub m: f64,
    pub arrivals: usize,
    pub max_thresholds: usize,
    /// Largest `Σ_τ |supp(x_τ)|` over the pass.
    pub max_stored: usize,
    /// Largest number of distinct elements referenced by any solution.
    pub max_distinct_stored: usize,
    /// Largest number of distinct solutions held at once.
    pub max_blocks: usize,
    /// Oracle calls of the pass and finalization (diagnostic `F(x̂)`
    /// evaluations excluded).
    pub oracle_calls: u64,
    pub estimates: u64,
    pub total_samples: u64,
    pub max_samples: u64,
    /// Exact derivatives that exceeded the cap and were sampled instead.
    pub fallback_estimates: u64,
    pub structure_checks: u64,
    pub finals: Vec<FinalState>,
    pub monitor: Vec<EstimateRecord>,
}

impl RunDiagnostics {
    /// Final state containing grid exponent `h`.
    pub fn final_at(&self, h: i64) -> Option<&FinalState> {
        self.finals
            .iter()
            .find(|f| f.exponents.is_some_and(|(lo, hi)| lo <= h && h <= hi))
    }
}

struct DerivativeSource<'a> {
    oracle: &'a ValueOracle,
    params: &'a SieveParams,
    mode: DerivativeMode,
    seed: u64,
    estimates: u64,
    total_samples: u64,
    max_samples: u64,
    fallbacks: u64,
    monitor: Vec<EstimateRecord>,
}

impl<'a> DerivativeSource<'a> {
    fn new(oracle: &'a ValueOracle, params: &'a SieveParams, mode: DerivativeMode, seed: u64) -> Self {
        DerivativeSource {
            oracle,
            params,
            mode,
            seed,
            estimates: 0,
            total_samples: 0,
            max_samples: 0,
            fallbacks: 0,
            monitor: Vec::new(),
        }
    }

    fn sampled(&mut self, x: &FractionalVector, u: ElementId, samples: u64, seed: u64) -> Result<f64> {
        if samples > MAX_SAMPLES_PER_ESTIMATE {
            return Err(Error::Capacity {
                what: "derivative estimate",
                required: samples as u128,
                limit: MAX_SAMPLES_PER_ESTIMATE as u128,
                hint: "; lower sample_scale",
            });
        }
        let est = estimate_partial_derivative(self.oracle, x, u, samples, seed)?;
        self.estimates += 1;
        self.total_samples += samples;
        self.max_samples = self.max_samples.max(samples);
        Ok(est.mean)
    }

    /// `∂_u F(x)` (or its estimate) at arrival `i`. All solutions share the
    /// sample streams of arrival `i`, so equal solutions get equal estimates.
    fn derivative(&mut self, x: &FractionalVector, u: ElementId, i: usize, tau_range: (f64, f64)) -> Result<f64> {
        let affordable = x.fractional_count() <= self.params.exact_cap;
        match self.mode {
            DerivativeMode::Exact if affordable => {
                partial_derivative_exact(self.oracle, x, u, self.params.exact_cap)
            }
            DerivativeMode::Exact => {
                self.fallbacks += 1;
                let seed = seed::derive_seed(self.seed, &[tag::FALLBACK, i as u64]);
                self.sampled(x, u, self.params.fallback_samples, seed)
            }
            DerivativeMode::Sampled => {
                let samples = self.params.samples_at(i)?;
                let seed = seed::derive_seed(self.seed, &[tag::DERIVATIVE, i as u64]);
                let estimate = self.sampled(x, u, samples, seed)?;
                if self.params.monitor_estimates && affordable {
                    let exact = partial_derivative_exact(self.oracle, x, u, self.params.exact_cap)?;
                    self.monitor.push(EstimateRecord {
                        arrival: i,
                        element: u,
                        tau_range,
                        estimate,
                        exact,
                        samples,
                    });
                }
                Ok(estimate)
            }
        }
    }
}

/// `S1`, `S2` and the better of the two for one fractional solution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Finalized {
    pub s1: OfflineSolution,
    pub s2: OfflineSolution,
}

impl Finalized {
    pub fn best(&self) -> &OfflineSolution {
        if self.s1.value >= self.s2.value {
            &self.s1
        } else {
            &self.s2
        }
    }
}

/// Rounds `x` into `S1` and solves the offline problem on `supp(x)` for `S2`.
pub fn finalize(oracle: &ValueOracle, x: &FractionalVector, params: &SieveParams, seed: u64) -> Result<Finalized> {
    let mut round_rng = seed::stream(seed, &[tag::ROUNDING]);
    let (s1, _) = swap_round(x, params.k, &mut round_rng)?;
    let s1_value = oracle.value(&s1)?;
    let mut offline_rng = seed::stream(seed, &[tag::OFFLINE]);
    let s2 = offline::solve(
        params.offline,
        oracle,
        &x.support(),
        params.k,
        params.max_subsets as u128,
        &mut offline_rng,
    )?;
    Ok(Finalized { s1: OfflineSolution { set: s1, value: s1_value }, s2 })
}

fn final_state(
    oracle: &ValueOracle,
    params: &SieveParams,
    exponents: Option<(i64, i64)>,
    tau_range: (f64, f64),
    x: FractionalVector,
    saturated: bool,
    done: Finalized,
) -> FinalState {
    FinalState {
        exponents,
        tau_range,
        multilinear: None,
        s1: done.s1.set,
        s1_value: done.s1.value,
        s2: done.s2.set,
        s2_value: done.s2.value,
        x,
        saturated,
    }
    .with_multilinear(oracle, params)
}

impl FinalState {
    fn with_multilinear(mut self, oracle: &ValueOracle, params: &SieveParams) -> Self {
        if params.diagnose_multilinear && self.x.fractional_count() <= params.exact_cap {
            self.multilinear = multilinear_exact(oracle, &self.x, params.exact_cap).ok();
        }
        self
    }
}

/// Single-threshold algorithm for a known estimate `τ` of `f(OPT)`.
///
/// Derivatives follow `params.derivative`; in sampled mode arrival `i` uses
/// `params.samples_at(i)` samples.
pub fn run_known_tau<I>(
    oracle: &ValueOracle,
    stream: I,
    tau: f64,
    params: &SieveParams,
    seed: u64,
) -> Result<(Vec<ElementId>, RunDiagnostics)>
where
    I: IntoIterator<Item = ElementId>,
{
    params.validate()?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::input(format!("tau = {tau} must be positive")));
    }
    let calls_before = oracle.calls();
    let mut state = ThresholdState::new(tau);
    let mut source = DerivativeSource::new(oracle, params, params.derivative, seed);
    let mut diag = RunDiagnostics { max_thresholds: 1, max_blocks: 1, ..Default::default() };

    for u in stream {
        if u >= oracle.ground_size() {
            return Err(Error::input(format!("streamed element {u} is outside the ground set")));
        }
        diag.arrivals += 1;
        if state.x.contains(u) {
            return Err(Error::input(format!("element {u} arrived twice")));
        }
        if state.saturated {
            continue;
        }
        let d = source.derivative(&state.x, u, diag.arrivals, (tau, tau))?;
        state.process_element(u, d, params)?;
        diag.structure_checks += 1;
        diag.max_stored = diag.max_stored.max(state.x.support_len());
    }
    diag.max_distinct_stored = diag.max_stored;

    let done = finalize(oracle, &state.x, params, seed::derive_seed(seed, &[tag::ROUNDING]))?;
    let best = done.best().clone();
    diag.value = best.value;
    diag.m = f64::NAN;
    diag.oracle_calls = oracle.calls() - calls_before;
    diag.estimates = source.estimates;
    diag.total_samples = source.total_samples;
    diag.max_samples = source.max_samples;
    diag.fallback_estimates = source.fallbacks;
    diag.monitor = source.monitor;
    diag.finals.push(final_state(oracle, params, None, (tau, tau), state.x, state.saturated, done));
    Ok((best.set, diag))
}

/// State of the grid algorithms between arrivals.
pub struct SieveRun<'a> {
    oracle: &'a ValueOracle,
    params: &'a SieveParams,
    source: DerivativeSource<'a>,
    seed: u64,
    empty_value: f64,
    m: f64,
    range: Option<(i64, i64)>,
    blocks: Vec<GridBlock>,
    diag: RunDiagnostics,
    calls_before: u64,
}

impl<'a> SieveRun<'a> {
    /// Evaluates `f(∅)`, sets `m` to it and builds the initial grid.
    pub fn new(oracle: &'a ValueOracle, params: &'a SieveParams, mode: DerivativeMode, seed: u64) -> Result<Self> {
        params.validate()?;
        let calls_before = oracle.calls();
        let empty_value = oracle.value(&[])?;
        let mut run = SieveRun {
            oracle,
            params,
            source: DerivativeSource::new(oracle, params, mode, seed),
            seed,
            empty_value,
            m: 0.0,
            range: None,
            blocks: Vec::new(),
            diag: RunDiagnostics::default(),
            calls_before,
        };
        run.update_threshold_grid(empty_value)?;
        run.record_memory();
        Ok(run)
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn arrivals(&self) -> usize {
        self.diag.arrivals
    }

    /// Exponent range of the live grid.
    pub fn grid_exponents(&self) -> Option<(i64, i64)> {
        self.range
    }

    pub fn grid(&self) -> Vec<f64> {
        self.range
            .map(|(lo, hi)| (lo..=hi).map(|h| grid_value(self.params.eps_prime, h)).collect())
            .unwrap_or_default()
    }

    pub fn blocks(&self) -> &[GridBlock] {
        &self.blocks
    }

    /// Per-threshold view of the solution for exponent `h`.
    pub fn state_at(&self, h: i64) -> Option<ThresholdState> {
        self.blocks.iter().find(|b| b.lo <= h && h <= b.hi).map(|b| ThresholdState {
            tau: grid_value(self.params.eps_prime, h),
            x: b.x.clone(),
            saturated: b.saturated,
        })
    }

    /// Moves the grid to `new_m`: thresholds that leave the window are
    /// deleted, thresholds that enter it start from the empty solution, all
    /// others are untouched.
    pub fn update_threshold_grid(&mut self, new_m: f64) -> Result<()> {
        if new_m < self.m {
            return Err(Error::input(format!("running maximum cannot decrease ({} -> {new_m})", self.m)));
        }
        let old = self.range;
        self.m = new_m;
        self.range = grid_bounds(new_m, self.params.eps_prime, self.params.k, self.params.c);
        let Some((lo, hi)) = self.range else {
            self.blocks.clear();
            return Ok(());
        };
        self.blocks.retain(|b| b.hi >= lo && b.lo <= hi);
        for b in &mut self.blocks {
            b.lo = b.lo.max(lo);
            b.hi = b.hi.min(hi);
        }
        let start = old.map_or(lo, |(_, old_hi)| (old_hi + 1).max(lo));
        if start <= hi {
            self.blocks.push(GridBlock::empty(start, hi));
        }
        merge_equal_neighbours(&mut self.blocks);
        Ok(())
    }

    /// Handles one arrival.
    pub fn process(&mut self, u: ElementId) -> Result<()> {
        if u >= self.oracle.ground_size() {
            return Err(Error::input(format!("streamed element {u} is outside the ground set")));
        }
        self.diag.arrivals += 1;
        let i = self.diag.arrivals;
        let singleton = self.oracle.value(&[u])?;
        if self.m < singleton {
            self.update_threshold_grid(singleton)?;
        }

        let eps = self.params.eps_prime;
        let blocks = std::mem::take(&mut self.blocks);
        let mut next = Vec::with_capacity(blocks.len() + 1);
        for block in blocks {
            if block.x.contains(u) {
                return Err(Error::input(format!("element {u} arrived twice")));
            }
            if block.saturated {
                next.push(block);
                continue;
            }
            let tau_range = (grid_value(eps, block.lo), grid_value(eps, block.hi));
            let d = self.source.derivative(&block.x, u, i, tau_range)?;
            let accepts = |h: i64| d >= self.params.threshold(grid_value(eps, h));
            if !accepts(block.lo) {
                next.push(block);
                continue;
            }
            // Acceptance holds on a prefix of the block.
            let last = if accepts(block.hi) {
                block.hi
            } else {
                let (mut yes, mut no) = (block.lo, block.hi);
                while no - yes > 1 {
                    let mid = yes + (no - yes) / 2;
                    if accepts(mid) {
                        yes = mid;
                    } else {
                        no = mid;
                    }
                }
                yes
            };
            let mut taken = GridBlock { hi: last, ..block.clone() };
            add_fraction(&mut taken.x, &mut taken.saturated, u, self.params.p, self.params.k)?;
            check_structure(&taken.x, taken.saturated, self.params.p, self.params.k)?;
            self.diag.structure_checks += 1;
            next.push(taken);
            if last < block.hi {
                next.push(GridBlock { lo: last + 1, ..block });
            }
        }
        merge_equal_neighbours(&mut next);
        self.blocks = next;
        self.record_memory();
        Ok(())
    }

    fn record_memory(&mut self) {
        let thresholds = self.range.map_or(0, |(lo, hi)| (hi - lo + 1) as usize);
        let stored: usize = self.blocks.iter().map(|b| b.width() * b.x.support_len()).sum();
        let mut distinct: Vec<ElementId> = self.blocks.iter().flat_map(|b| b.x.support()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let d = &mut self.diag;
        d.max_thresholds = d.max_thresholds.max(thresholds);
        d.max_stored = d.max_stored.max(stored);
        d.max_distinct_stored = d.max_distinct_stored.max(distinct.len());
        d.max_blocks = d.max_blocks.max(self.blocks.len());
    }

    /// Rounds and solves every solution and returns the best set, or `∅`
    /// when the grid is empty.
    pub fn finish(self) -> Result<(Vec<ElementId>, RunDiagnostics)> {
        let SieveRun { oracle, params, source, seed, empty_value, m, blocks, mut diag, calls_before, .. } = self;
        let eps = params.eps_prime;
        let mut best: Option<OfflineSolution> = None;
        let mut pending = Vec::with_capacity(blocks.len());
        for block in blocks {
            let done = finalize(
                oracle,
                &block.x,
                params,
                seed::derive_seed(seed, &[tag::ROUNDING, block.lo as u64]),
            )?;
            let candidate = done.best();
            if best.as_ref().is_none_or(|b| candidate.value > b.value) {
                best = Some(candidate.clone());
            }
            pending.push((block, done));
        }
        diag.oracle_calls = oracle.calls() - calls_before;
        for (block, done) in pending {
            let range = (grid_value(eps, block.lo), grid_value(eps, block.hi));
            diag.finals.push(final_state(
                oracle,
                params,
                Some((block.lo, block.hi)),
                range,
                block.x,
                block.saturated,
                done,
            ));
        }
        let best = best.unwrap_or(OfflineSolution { set: Vec::new(), value: empty_value });
        diag.value = best.value;
        diag.m = m;
        diag.estimates = source.estimates;
        diag.total_samples = source.total_samples;
        diag.max_samples = source.max_samples;
        diag.fallback_estimates = source.fallbacks;
        diag.monitor = source.monitor;
        Ok((best.set, diag))
    }
}

fn merge_equal_neighbours(blocks: &mut Vec<GridBlock>) {
    let mut merged: Vec<GridBlock> = Vec::with_capacity(blocks.len());
    for b in blocks.drain(..) {
        match merged.last_mut() {
            Some(prev) if prev.hi + 1 == b.lo && prev.same_solution(&b) => prev.hi = b.hi,
            _ => merged.push(b),
        }
    }
    *blocks = merged;
}

/// Runs a grid algorithm over `stream` with the given derivative mode.
pub fn run_grid<I>(
    oracle: &ValueOracle,
    stream: I,
    params: &SieveParams,
    mode: DerivativeMode,
    seed: u64,
) -> Result<(Vec<ElementId>, RunDiagnostics)>
where
    I: IntoIterator<Item = ElementId>,
{
    let mut run = SieveRun::new(oracle, params, mode, seed)?;
    for u in stream {
        run.process(u)?;
    }
    run.finish()
}

/// Threshold-grid algorithm with exact derivatives; no estimate of
/// `f(OPT)` is needed. Solutions whose fractional support exceeds
/// `params.exact_cap` fall back to `params.fallback_samples` samples.
pub fn run_auto_tau<I>(oracle: &ValueOracle, stream: I, params: &SieveParams, seed: u64) -> Result<(Vec<ElementId>, RunDiagnostics)>
where
    I: IntoIterator<Item = ElementId>,
{
    run_grid(oracle, stream, params, DerivativeMode::Exact, seed)
}

/// Threshold-grid algorithm using only value-oracle access to `f`:
/// derivatives at arrival `i` average `params.samples_at(i)` samples.
pub fn run_sampled<I>(oracle: &ValueOracle, stream: I, params: &SieveParams, seed: u64) -> Result<(Vec<ElementId>, RunDiagnostics)>
where
    I: IntoIterator<Item = ElementId>,
{
    run_grid(oracle, stream, params, DerivativeMode::Sampled, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_coverage, make_modular, ValueOracle};

    fn params(k: usize, p: f64) -> SieveParams {
        SieveParams::new(k, p, 1.0, 0.125).unwrap()
    }

    #[test]
    fn choose_c_values() {
        let c = choose_c(0.460675, 0.24).unwrap();
        assert!((c - 0.3501130 / 1.49895).abs() < 1e-9);
        assert!(c >= 0.233);
        let c = choose_c(1.0, 0.125).unwrap();
        assert!((c - 0.875 / 2.765625).abs() < 1e-15);
        assert!(choose_c(0.0, 0.5).is_err());
        assert!(choose_c(1.5, 0.5).is_err());
        assert!(choose_c(0.5, 1.0).is_err());
        assert!(choose_c(0.5, 0.0).is_err());
    }

    #[test]
    fn process_element_threshold_and_clamp() {
        let prm = params(1, 0.4);
        let tau = 2.0;
        let t = prm.threshold(tau);
        let mut st = ThresholdState::new(tau);
        assert!(!st.process_element(0, t - 1e-6, &prm).unwrap());
        assert!(st.x().is_empty());
        assert!(st.process_element(1, t, &prm).unwrap());
        assert_eq!(st.x().get(1), 0.4);
        assert!(st.process_element(2, t + 1.0, &prm).unwrap());
        assert_eq!(st.x().get(2), 0.4);
        // |x|_1 = 0.8 = k − p/2: the clamp adds exactly p/2 and saturates.
        assert!(st.process_element(3, t, &prm).unwrap());
        assert!((st.x().get(3) - 0.2).abs() < 1e-15);
        assert!(st.is_saturated());
        assert!((st.x().l1() - 1.0).abs() < 1e-12);
        assert!(!st.process_element(4, 1e9, &prm).unwrap());
        assert!(st.process_element(3, t, &prm).is_err());
    }

    #[test]
    fn grid_example_and_empty_grid() {
        assert_eq!(threshold_grid(1.0, 1.0, 8, 0.5), vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0]);
        assert!(threshold_grid(0.0, 1.0, 8, 0.5).is_empty());
        assert_eq!(grid_bounds(1.0, 1.0, 8, 0.5), Some((-1, 4)));
        assert_eq!(grid_bounds(2.0, 1.0, 8, 0.5), Some((0, 5)));
    }

    #[test]
    fn grid_update_shifts_window() {
        let f = make_modular(vec![1.0, 2.0]).unwrap();
        let prm = SieveParams::new(8, 0.5, 1.0, 0.5).unwrap().with_c(0.5).unwrap();
        let mut run = SieveRun::new(&f, &prm, DerivativeMode::Exact, 0).unwrap();
        assert!(run.grid().is_empty());
        run.update_threshold_grid(1.0).unwrap();
        assert_eq!(run.grid_exponents(), Some((-1, 6)));
        run.update_threshold_grid(1.5).unwrap();
        assert_eq!(run.grid_exponents(), Some((0, 7)));
        assert_eq!(run.blocks().len(), 1);
        assert!(run.update_threshold_grid(1.0).is_err());
    }

    #[test]
    fn empty_stream_returns_empty_set() {
        let f = make_modular(vec![1.0, 2.0]).unwrap();
        let prm = params(1, 0.5);
        let (s, d) = run_known_tau(&f, std::iter::empty(), 1.0, &prm, 0).unwrap();
        assert!(s.is_empty());
        assert_eq!(d.value, 0.0);
        let (s, d) = run_auto_tau(&f, std::iter::empty(), &prm, 0).unwrap();
        assert!(s.is_empty());
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn zero_function_keeps_grid_empty() {
        let f = make_coverage(vec![1.0], vec![vec![], vec![], vec![]]).unwrap();
        let prm = params(2, 0.5);
        let (s, d) = run_auto_tau(&f, 0..3, &prm, 1).unwrap();
        assert!(s.is_empty());
        assert_eq!(d.max_thresholds, 0);
        assert!(d.finals.is_empty());
    }

    #[test]
    fn finalize_empty_and_integral() {
        let f = make_modular(vec![1.0, 2.0, 4.0]).unwrap();
        let prm = params(2, 0.5);
        let done = finalize(&f, &FractionalVector::new(), &prm, 0).unwrap();
        assert!(done.s1.set.is_empty() && done.s2.set.is_empty());
        let x = FractionalVector::indicator(&[1, 2]);
        let done = finalize(&f, &x, &prm, 0).unwrap();
        assert!(done.best().value >= 6.0);
        assert_eq!(done.best().value, done.s1.value.max(done.s2.value));
    }

    #[test]
    fn modular_stream_accepts_heavy_elements() {
        let f: ValueOracle = make_modular(vec![5.0, 0.1, 4.0, 0.2]).unwrap();
        let prm = params(2, 0.5);
        let (s, d) = run_known_tau(&f, 0..4, 9.0, &prm, 3).unwrap();
        assert_eq!(d.finals[0].x.support(), vec![0, 2]);
        assert_eq!(s, vec![0, 2]);
    }

    #[test]
    fn budget_scale_keeps_samples_bounded() {
        let scale = scale_for_budget(0.24, 3, 1e-4, 12, 10_000).unwrap();
        let prm = SieveParams::new(3, 0.24, 0.460675, 1e-4).unwrap().with_sample_scale(scale).unwrap();
        for i in 1..=12 {
            assert!(prm.samples_at(i).unwrap() <= 10_000);
        }
        assert!(prm.samples_at(12).unwrap() >= 9_999);
    }

    #[test]
    fn structure_check_rejects_two_residuals() {
        let x = FractionalVector::from_pairs([(0, 0.5), (1, 0.3), (2, 0.2)]).unwrap();
        assert!(check_structure(&x, true, 0.5, 1).is_err());
        let x = FractionalVector::from_pairs([(0, 0.5), (1, 0.3)]).unwrap();
        assert!(check_structure(&x, false, 0.5, 1).is_err());
        let x = FractionalVector::from_pairs([(0, 0.5), (1, 0.5)]).unwrap();
        assert!(check_structure(&x, true, 0.5, 1).is_ok());
    }
}
