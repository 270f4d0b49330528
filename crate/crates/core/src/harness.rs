//! Experiment harness: instance generation, offline and streaming baselines,
//! the experiment runner and report aggregation.
//!
//! # Configuration
//!
//! Experiments are described by a TOML file (see [`ExperimentConfig`]):
//!
//! ```toml
//! variant = "auto_tau"        # known_tau | auto_tau | sampled
//! p = 0.125
//! alpha = 1.0
//! c = "auto"                  # or a number
//! eps_prime = 0.125
//! offline = "brute_force"     # or "random_greedy"
//! seed = 1
//! repetitions = 10
//! baselines = ["greedy", "sieve_streaming"]
//! instances = ["../instances/hard-k3-h2-s0.json"]
//! output = "results/run"      # writes results/run.csv and results/run.json
//!
//! [[generate]]
//! type = "coverage"
//! n = 12
//! k = 3
//! universe = 20
//! density = 0.3
//! count = 5
//! seed = 100
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//!
//! # Report
//!
//! One row per (instance, repetition) for the configured variant and one row
//! per (instance, baseline); columns are listed in [`REPORT_COLUMNS`].
//! `f_opt` is the brute-force optimum when affordable; otherwise it is the
//! best value any row found on that instance and `bound_only` is set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extensions::DEFAULT_EXACT_CAP;
use crate::instance::{InstanceFile, ObjectiveSpec};
use crate::objectives::{
    check_non_negative, check_submodular, random_coverage, random_cut, ElementId, HardInstance, HardOrder,
    ValueOracle, Violation, MAX_EXHAUSTIVE_N,
};
use crate::offline::{brute_force, subsets_up_to, OfflineMode, DEFAULT_MAX_SUBSETS};
use crate::seed::{self, tag};
use crate::sieve::{
    choose_c, run_auto_tau, run_known_tau, run_sampled, scale_for_budget, RunDiagnostics, SieveParams,
};

/// Environment variable overriding the number of worker threads.
pub const WORKERS_ENV: &str = "MLSIEVE_WORKERS";

/// Largest ground set for which the runner tabulates `f` up front.
pub const MEMO_MAX_N: usize = 20;

// ---------------------------------------------------------------------------
// Instance generation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InstanceSpec {
    Coverage {
        n: usize,
        k: usize,
        universe: usize,
        #[serde(default = "default_density")]
        density: f64,
        #[serde(default = "one")]
        min_weight: f64,
        #[serde(default = "one")]
        max_weight: f64,
    },
    Cut {
        n: usize,
        k: usize,
        #[serde(default = "default_density")]
        edge_probability: f64,
        #[serde(default = "one")]
        max_weight: f64,
    },
    Modular {
        n: usize,
        k: usize,
        #[serde(default)]
        min_weight: f64,
        #[serde(default = "one")]
        max_weight: f64,
    },
    /// Adversarial instance with `k + h` elements; `w` always arrives last.
    Hard {
        k: usize,
        h: usize,
        #[serde(default)]
        order: HardOrder,
    },
}

fn default_density() -> f64 {
    0.3
}

fn one() -> f64 {
    1.0
}

impl InstanceSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            InstanceSpec::Coverage { .. } => "coverage",
            InstanceSpec::Cut { .. } => "cut",
            InstanceSpec::Modular { .. } => "modular",
            InstanceSpec::Hard { .. } => "hard",
        }
    }
}

fn shuffled_order(n: usize, seed: u64) -> Vec<ElementId> {
    let mut order: Vec<ElementId> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed, &[tag::GENERATE, 1]));
    order
}

/// Builds an instance file from `spec`. The result depends only on
/// `(spec, seed)`, so repeated calls serialize to identical bytes.
pub fn generate_instance(spec: &InstanceSpec, seed: u64) -> Result<InstanceFile> {
    let mut rng = seed::stream(seed, &[tag::GENERATE]);
    let check_nk = |n: usize, k: usize| {
        if n == 0 || k == 0 {
            Err(Error::input(format!("instance spec needs n >= 1 and k >= 1, got n={n}, k={k}")))
        } else {
            Ok(())
        }
    };
    let inst = match *spec {
        InstanceSpec::Coverage { n, k, universe, density, min_weight, max_weight } => {
            check_nk(n, k)?;
            let cov = random_coverage(&mut rng, n, universe, density, (min_weight, max_weight))?;
            InstanceFile {
                id: format!("coverage-n{n}-k{k}-s{seed}"),
                objective: ObjectiveSpec::Coverage {
                    universe_weights: cov.universe_weights().to_vec(),
                    covers: cov.covers().to_vec(),
                },
                n,
                k,
                arrival_order: shuffled_order(n, seed),
            }
        }
        InstanceSpec::Cut { n, k, edge_probability, max_weight } => {
            check_nk(n, k)?;
            let cut = random_cut(&mut rng, n, edge_probability, max_weight)?;
            InstanceFile {
                id: format!("cut-n{n}-k{k}-s{seed}"),
                objective: ObjectiveSpec::Cut { edges: cut.edges().to_vec() },
                n,
                k,
                arrival_order: shuffled_order(n, seed),
            }
        }
        InstanceSpec::Modular { n, k, min_weight, max_weight } => {
            check_nk(n, k)?;
            if !(0.0 <= min_weight && min_weight <= max_weight) {
                return Err(Error::input("modular weights need 0 <= min <= max"));
            }
            use rand::Rng;
            let weights = (0..n).map(|_| rng.random_range(min_weight..=max_weight)).collect();
            InstanceFile {
                id: format!("modular-n{n}-k{k}-s{seed}"),
                objective: ObjectiveSpec::Modular { weights },
                n,
                k,
                arrival_order: shuffled_order(n, seed),
            }
        }
        InstanceSpec::Hard { k, h, order } => {
            let hard = HardInstance::new(k, h)?;
            InstanceFile {
                id: format!("hard-k{k}-h{h}-s{seed}"),
                objective: ObjectiveSpec::Hard { h },
                n: k + h,
                k,
                arrival_order: hard.arrival_order(order, seed),
            }
        }
    };
    inst.validate()?;
    Ok(inst)
}

// ---------------------------------------------------------------------------
// Baselines

/// Offline greedy: up to `k` rounds, each adding the element of largest
/// marginal gain (smallest id on ties) while that gain is positive.
pub fn baseline_greedy(oracle: &ValueOracle, ground: &[ElementId], k: usize) -> Result<Vec<ElementId>> {
    let mut remaining = ground.to_vec();
    remaining.sort_unstable();
    remaining.dedup();
    let mut chosen = Vec::with_capacity(k);
    let mut current = oracle.value(&chosen)?;
    let mut with = Vec::with_capacity(k + 1);
    while chosen.len() < k {
        let mut best: Option<(f64, usize, f64)> = None;
        for (idx, &u) in remaining.iter().enumerate() {
            with.clear();
            with.extend_from_slice(&chosen);
            with.push(u);
            let value = oracle.value(&with)?;
            let gain = value - current;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, idx, value));
            }
        }
        match best {
            Some((gain, idx, value)) if gain > 0.0 => {
                chosen.push(remaining.remove(idx));
                current = value;
            }
            _ => break,
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SieveStreamingOutcome {
    pub set: Vec<ElementId>,
    pub value: f64,
    /// Largest `Σ_v |S_v|` over the pass.
    pub max_stored: usize,
    pub max_thresholds: usize,
}

/// Integral threshold streaming over guesses `v ∈ {(1+ε)^i : m ≤ v ≤ 2km}`
/// of `f(OPT)`, where `m` is the running singleton maximum. Each guess keeps
/// its own set `S_v` and takes `e` when `|S_v| < k` and
/// `f(S_v + e) − f(S_v) ≥ (v/2 − f(S_v)) / (k − |S_v|)`.
pub fn sieve_streaming<I>(oracle: &ValueOracle, stream: I, k: usize, eps: f64) -> Result<SieveStreamingOutcome>
where
    I: IntoIterator<Item = ElementId>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::input(format!("sieve-streaming eps = {eps} must be positive")));
    }
    let empty = oracle.value(&[])?;
    let base = 1.0 + eps;
    let pow = |i: i64| base.powi(i as i32);
    let mut m = 0.0f64;
    let mut guesses: BTreeMap<i64, (Vec<ElementId>, f64)> = BTreeMap::new();
    let (mut max_stored, mut max_thresholds) = (0, 0);
    let mut with = Vec::with_capacity(k + 1);

    for e in stream {
        let singleton = oracle.value(&[e])?;
        if singleton > m {
            m = singleton;
            let upper = 2.0 * k as f64 * m;
            let mut lo = (m.ln() / base.ln()).ceil() as i64;
            while pow(lo) < m {
                lo += 1;
            }
            while pow(lo - 1) >= m {
                lo -= 1;
            }
            let mut hi = (upper.ln() / base.ln()).floor() as i64;
            while pow(hi) > upper {
                hi -= 1;
            }
            while pow(hi + 1) <= upper {
                hi += 1;
            }
            guesses.retain(|&i, _| lo <= i && i <= hi);
            for i in lo..=hi {
                guesses.entry(i).or_insert_with(|| (Vec::new(), empty));
            }
        }
        for (&i, (set, value)) in guesses.iter_mut() {
            if set.len() >= k {
                continue;
            }
            with.clear();
            with.extend_from_slice(set);
            with.push(e);
            let next = oracle.value(&with)?;
            let needed = (pow(i) / 2.0 - *value) / (k - set.len()) as f64;
            if next - *value >= needed {
                set.push(e);
                *value = next;
            }
        }
        max_thresholds = max_thresholds.max(guesses.len());
        max_stored = max_stored.max(guesses.values().map(|(s, _)| s.len()).sum());
    }

    let (mut set, value) = guesses
        .into_values()
        .fold((Vec::new(), empty), |best, cand| if cand.1 > best.1 { cand } else { best });
    set.sort_unstable();
    Ok(SieveStreamingOutcome { set, value, max_stored, max_thresholds })
}

/// Set returned by [`sieve_streaming`].
pub fn baseline_sieve_streaming<I>(oracle: &ValueOracle, stream: I, k: usize, eps: f64) -> Result<Vec<ElementId>>
where
    I: IntoIterator<Item = ElementId>,
{
    Ok(sieve_streaming(oracle, stream, k, eps)?.set)
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    KnownTau,
    #[default]
    AutoTau,
    Sampled,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::KnownTau => "known_tau",
            Variant::AutoTau => "auto_tau",
            Variant::Sampled => "sampled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Greedy,
    SieveStreaming,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Greedy => "greedy",
            Baseline::SieveStreaming => "sieve_streaming",
        }
    }
}

/// Threshold coefficient: `"auto"` derives it from `alpha` and `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CChoice {
    Value(f64),
    Named(String),
}

impl Default for CChoice {
    fn default() -> Self {
        CChoice::Named("auto".into())
    }
}

/// `count` instances from `spec` with seeds `seed, seed+1, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateEntry {
    #[serde(flatten)]
    pub spec: InstanceSpec,
    #[serde(default = "one_usize")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instances: Vec<PathBuf>,
    pub generate: Vec<GenerateEntry>,
    pub variant: Variant,
    pub p: f64,
    pub alpha: f64,
    pub c: CChoice,
    pub eps_prime: f64,
    pub offline: OfflineMode,
    /// Fixed multiplier on the sample count (sampled variant).
    pub sample_scale: Option<f64>,
    /// Alternatively, the largest number of samples per estimate; the scale
    /// is then derived per instance.
    pub sample_budget: Option<u64>,
    pub seed: u64,
    /// Runs of the variant per instance, with seeds `seed, seed+1, ...`.
    pub repetitions: usize,
    /// Estimate of `f(OPT)` for `known_tau`; defaults to the brute-force optimum.
    pub tau: Option<f64>,
    pub baselines: Vec<Baseline>,
    pub baseline_eps: f64,
    /// Tabulate `f` for instances with at most [`MEMO_MAX_N`] elements.
    pub memo: bool,
    pub exact_cap: usize,
    pub fallback_samples: u64,
    /// Work limit for brute-force optimum and offline solves.
    pub max_subsets: u64,
    /// Output prefix; `<prefix>.csv` and `<prefix>.json` are written.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            instances: Vec::new(),
            generate: Vec::new(),
            variant: Variant::AutoTau,
            p: 0.125,
            alpha: 1.0,
            c: CChoice::default(),
            eps_prime: 0.125,
            offline: OfflineMode::BruteForce,
            sample_scale: None,
            sample_budget: None,
            seed: 0,
            repetitions: 1,
            tau: None,
            baselines: Vec::new(),
            baseline_eps: 0.1,
            memo: true,
            exact_cap: DEFAULT_EXACT_CAP,
            fallback_samples: 10_000,
            max_subsets: DEFAULT_MAX_SUBSETS as u64,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_toml(&fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or_else(|| Path::new(""));
        for p in &mut config.instances {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        if let Some(out) = &mut config.output {
            if out.is_relative() {
                *out = dir.join(&*out);
            }
        }
        Ok(config)
    }

    /// Sieve parameters for an instance with cardinality bound `k`.
    pub fn params(&self, k: usize) -> Result<SieveParams> {
        let c = match &self.c {
            CChoice::Value(c) => *c,
            CChoice::Named(s) if s == "auto" => choose_c(self.alpha, self.p)?,
            CChoice::Named(s) => return Err(Error::input(format!("c must be a number or \"auto\", got {s:?}"))),
        };
        let mut params = SieveParams::new(k, self.p, self.alpha, self.eps_prime)?
            .with_c(c)?
            .with_offline(self.offline);
        params.exact_cap = self.exact_cap;
        params.fallback_samples = self.fallback_samples;
        params.max_subsets = self.max_subsets;
        params.diagnose_multilinear = false;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_scale.is_some() && self.sample_budget.is_some() {
            return Err(Error::input("set at most one of sample_scale and sample_budget"));
        }
        if self.repetitions == 0 {
            return Err(Error::input("repetitions must be at least 1"));
        }
        if self.baseline_eps.is_nan() || self.baseline_eps <= 0.0 {
            return Err(Error::input("baseline_eps must be positive"));
        }
        self.params(1).map(|_| ())
    }

    /// Loads the listed instance files and generates the inline ones, in
    /// that order.
    pub fn collect_instances(&self) -> Result<Vec<InstanceFile>> {
        let mut out = Vec::new();
        for path in &self.instances {
            out.push(InstanceFile::load(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?);
        }
        for entry in &self.generate {
            for j in 0..entry.count {
                out.push(generate_instance(&entry.spec, entry.seed.wrapping_add(j as u64))?);
            }
        }
        Ok(out)
    }
}

/// Config running `base`'s variant on hard instances for every `(k, h)`
/// pair, each with `w` arriving last. Stored-element counts in the report
/// then show how memory grows with `h`.
pub fn memory_sweep_config(ks: &[usize], hs: &[usize], order: HardOrder, base: ExperimentConfig) -> ExperimentConfig {
    let generate = ks
        .iter()
        .flat_map(|&k| hs.iter().map(move |&h| (k, h)))
        .map(|(k, h)| GenerateEntry { spec: InstanceSpec::Hard { k, h, order }, count: 1, seed: base.seed })
        .collect();
    ExperimentConfig { instances: Vec::new(), generate, ..base }
}

// ---------------------------------------------------------------------------
// Report

/// Column order of the CSV report.
pub const REPORT_COLUMNS: [&str; 18] = [
    "instance_id",
    "variant",
    "n",
    "k",
    "p",
    "c",
    "alpha",
    "eps_prime",
    "seed",
    "f_output",
    "f_opt",
    "bound_only",
    "ratio",
    "max_stored",
    "max_thresholds",
    "oracle_calls",
    "runtime_ms",
    "error",
];

/// One report row. Fields that do not apply (for example `p` for a
/// baseline, or `f_output` after an error) are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub instance_id: String,
    pub variant: String,
    pub n: usize,
    pub k: usize,
    pub p: Option<f64>,
    pub c: Option<f64>,
    pub alpha: Option<f64>,
    pub eps_prime: Option<f64>,
    pub seed: u64,
    pub f_output: Option<f64>,
    pub f_opt: Option<f64>,
    pub bound_only: bool,
    pub ratio: Option<f64>,
    pub max_stored: Option<usize>,
    pub max_thresholds: Option<usize>,
    pub oracle_calls: u64,
    pub runtime_ms: f64,
    pub error: String,
}

impl ReportRow {
    fn blank(inst: &InstanceFile, variant: &str, seed: u64) -> Self {
        ReportRow {
            instance_id: inst.id.clone(),
            variant: variant.to_string(),
            n: inst.n,
            k: inst.k,
            p: None,
            c: None,
            alpha: None,
            eps_prime: None,
            seed,
            f_output: None,
            f_opt: None,
            bound_only: false,
            ratio: None,
            max_stored: None,
            max_thresholds: None,
            oracle_calls: 0,
            runtime_ms: 0.0,
            error: String::new(),
        }
    }

    /// Same row with the runtime zeroed, for reproducibility comparisons.
    pub fn without_runtime(&self) -> Self {
        ReportRow { runtime_ms: 0.0, ..self.clone() }
    }
}

pub fn write_csv(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(REPORT_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != REPORT_COLUMNS {
        return Err(Error::input(format!("unexpected report columns {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_json(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(rows)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `<prefix>.csv` and `<prefix>.json`; returns both paths.
pub fn write_report(rows: &[ReportRow], prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let csv_path = prefix.with_extension("csv");
    let json_path = prefix.with_extension("json");
    write_csv(rows, &csv_path)?;
    write_json(rows, &json_path)?;
    Ok((csv_path, json_path))
}

// ---------------------------------------------------------------------------
// Runner

/// Thread pool sized by `MLSIEVE_WORKERS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| Error::input(format!("{WORKERS_ENV}={raw:?} is not a worker count")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::input(format!("cannot start worker pool: {e}")))
}

struct Prepared {
    inst: InstanceFile,
    oracle: ValueOracle,
    opt: Option<f64>,
}

fn prepare(inst: InstanceFile, config: &ExperimentConfig) -> Result<Prepared> {
    let mut oracle = inst.oracle(false)?;
    if config.memo && inst.n <= MEMO_MAX_N.min(MAX_EXHAUSTIVE_N) {
        oracle = oracle.with_memo()?;
    }
    let ground: Vec<ElementId> = (0..inst.n).collect();
    let opt = if subsets_up_to(inst.n, inst.k) <= config.max_subsets as u128 {
        Some(brute_force(&oracle, &ground, inst.k, config.max_subsets as u128)?.value)
    } else {
        None
    };
    Ok(Prepared { inst, oracle, opt })
}

#[derive(Clone, Copy)]
enum Task {
    Variant(u64),
    Baseline(Baseline),
}

fn accounting_check(diag: &RunDiagnostics, params: &SieveParams, variant: Variant) -> Result<()> {
    let thresholds = diag.max_thresholds;
    if diag.max_stored > params.max_support() * thresholds.max(1) {
        return Err(Error::Invariant(format!(
            "{} stored elements exceed ⌈k/p⌉·|T| = {}",
            diag.max_stored,
            params.max_support() * thresholds.max(1)
        )));
    }
    if variant != Variant::KnownTau && thresholds as f64 > params.grid_size_bound() + 1e-9 {
        return Err(Error::Invariant(format!(
            "{thresholds} thresholds exceed the grid-size bound {}",
            params.grid_size_bound()
        )));
    }
    Ok(())
}

fn run_variant(prep: &Prepared, config: &ExperimentConfig, seed: u64, row: &mut ReportRow) -> Result<()> {
    let inst = &prep.inst;
    let mut params = config.params(inst.k)?;
    row.p = Some(params.p);
    row.c = Some(params.c);
    row.alpha = Some(params.alpha);
    row.eps_prime = Some(params.eps_prime);
    let oracle = prep.oracle.fork();
    let stream = inst.arrival_order.iter().copied();
    let started = Instant::now();
    let result = match config.variant {
        Variant::KnownTau => {
            let tau = config.tau.or(prep.opt).ok_or_else(|| {
                Error::input("known_tau needs `tau` or an instance small enough for brute force")
            })?;
            run_known_tau(&oracle, stream, tau, &params, seed)
        }
        Variant::AutoTau => run_auto_tau(&oracle, stream, &params, seed),
        Variant::Sampled => {
            params.sample_scale = match (config.sample_scale, config.sample_budget) {
                (Some(scale), _) => scale,
                (None, Some(budget)) => scale_for_budget(params.p, params.k, params.eps_prime, inst.n, budget)?,
                (None, None) => 1.0,
            };
            params.validate()?;
            run_sampled(&oracle, stream, &params, seed)
        }
    };
    row.runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    row.oracle_calls = oracle.calls();
    let (_, diag) = result?;
    row.f_output = Some(diag.value);
    row.max_stored = Some(diag.max_stored);
    row.max_thresholds = Some(diag.max_thresholds);
    accounting_check(&diag, &params, config.variant)
}

fn run_baseline(prep: &Prepared, config: &ExperimentConfig, which: Baseline, row: &mut ReportRow) -> Result<()> {
    let inst = &prep.inst;
    let oracle = prep.oracle.fork();
    let started = Instant::now();
    let result = match which {
        Baseline::Greedy => {
            let ground: Vec<ElementId> = (0..inst.n).collect();
            baseline_greedy(&oracle, &ground, inst.k).and_then(|s| {
                let v = oracle.value(&s)?;
                Ok((v, s.len(), 1))
            })
        }
        Baseline::SieveStreaming => {
            row.eps_prime = Some(config.baseline_eps);
            sieve_streaming(&oracle, inst.arrival_order.iter().copied(), inst.k, config.baseline_eps)
                .map(|o| (o.value, o.max_stored, o.max_thresholds))
        }
    };
    row.runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    row.oracle_calls = oracle.calls();
    let (value, stored, thresholds) = result?;
    row.f_output = Some(value);
    row.max_stored = Some(stored);
    row.max_thresholds = Some(thresholds);
    Ok(())
}

/// Runs the configured variant and baselines over every instance.
///
/// Rows come out in a fixed order (instance, then repetitions, then
/// baselines) regardless of how many workers run them, and per-row errors
/// are recorded in the `error` column rather than aborting the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    config.validate()?;
    let instances = config.collect_instances()?;
    worker_pool()?.install(|| run_instances(instances, config))
}

fn run_instances(instances: Vec<InstanceFile>, config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let prepared: Vec<Prepared> = instances
        .into_par_iter()
        .map(|inst| prepare(inst, config))
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, Task)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(idx, _)| {
            let reps = (0..config.repetitions as u64).map(move |r| (idx, Task::Variant(r)));
            let base = config.baselines.iter().map(move |&b| (idx, Task::Baseline(b)));
            reps.chain(base)
        })
        .collect();

    let mut rows: Vec<ReportRow> = tasks
        .par_iter()
        .map(|&(idx, task)| {
            let prep = &prepared[idx];
            let (mut row, outcome) = match task {
                Task::Variant(r) => {
                    let seed = config.seed.wrapping_add(r);
                    let mut row = ReportRow::blank(&prep.inst, config.variant.name(), seed);
                    let outcome = run_variant(prep, config, seed, &mut row);
                    (row, outcome)
                }
                Task::Baseline(b) => {
                    let mut row = ReportRow::blank(&prep.inst, b.name(), config.seed);
                    let outcome = run_baseline(prep, config, b, &mut row);
                    (row, outcome)
                }
            };
            if let Err(e) = outcome {
                row.error = e.to_string();
                if !matches!(e, Error::Invariant(_)) {
                    row.f_output = None;
                }
            }
            row
        })
        .collect();

    // Optimum, or the best value seen when brute force is unaffordable.
    let mut offset = 0;
    for prep in &prepared {
        let count = config.repetitions + config.baselines.len();
        let group = &mut rows[offset..offset + count];
        offset += count;
        let (opt, bound_only) = match prep.opt {
            Some(v) => (Some(v), false),
            None => {
                let best = group.iter().filter_map(|r| r.f_output).fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.max(v)))
                });
                (best, true)
            }
        };
        for row in group {
            row.f_opt = opt;
            row.bound_only = bound_only;
            row.ratio = match (row.f_output, opt) {
                (Some(out), Some(opt)) if opt > 0.0 => Some(out / opt),
                _ => None,
            };
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Aggregation and validation

/// Sample mean and standard error of the mean (0 for fewer than two values).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub rows: usize,
    pub errors: usize,
    pub mean_ratio: Option<f64>,
    pub stderr_ratio: Option<f64>,
    pub min_ratio: Option<f64>,
    pub mean_max_stored: Option<f64>,
    pub max_max_stored: Option<usize>,
    pub mean_oracle_calls: f64,
    pub mean_runtime_ms: f64,
}

/// Per-variant aggregates, in order of first appearance.
pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.variant.as_str()) {
            order.push(&r.variant);
        }
    }
    order
        .into_iter()
        .map(|variant| {
            let group: Vec<&ReportRow> = rows.iter().filter(|r| r.variant == variant).collect();
            let ratios: Vec<f64> = group.iter().filter_map(|r| r.ratio).collect();
            let stored: Vec<usize> = group.iter().filter_map(|r| r.max_stored).collect();
            let (mean, se) = mean_and_stderr(&ratios);
            let n = group.len() as f64;
            SummaryRow {
                variant: variant.to_string(),
                rows: group.len(),
                errors: group.iter().filter(|r| !r.error.is_empty()).count(),
                mean_ratio: (!ratios.is_empty()).then_some(mean),
                stderr_ratio: (!ratios.is_empty()).then_some(se),
                min_ratio: ratios.iter().copied().reduce(f64::min),
                mean_max_stored: (!stored.is_empty())
                    .then(|| stored.iter().sum::<usize>() as f64 / stored.len() as f64),
                max_max_stored: stored.iter().copied().max(),
                mean_oracle_calls: group.iter().map(|r| r.oracle_calls as f64).sum::<f64>() / n,
                mean_runtime_ms: group.iter().map(|r| r.runtime_ms).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn write_summary_csv(summary: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in summary {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub instance_id: String,
    pub n: usize,
    pub negative: Option<Violation>,
    pub submodularity: Option<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.negative.is_none() && self.submodularity.is_none()
    }
}

/// Exhaustive non-negativity and submodularity checks (`n ≤ 22`).
pub fn validate_instance(inst: &InstanceFile, tol: f64) -> Result<ValidationReport> {
    let oracle = inst.oracle(false)?;
    Ok(ValidationReport {
        instance_id: inst.id.clone(),
        n: inst.n,
        negative: check_non_negative(&oracle)?,
        submodularity: check_submodular(&oracle, tol)?,
    })
}
