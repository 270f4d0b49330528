//! Independent reference implementations and instance builders shared by the
//! integration tests. Nothing here calls the crate's own extension or
//! offline code.

#![allow(dead_code)]

use mlsieve::objectives::{random_coverage, random_cut, ElementId, Modular, SetFunction, ValueOracle};
use mlsieve::FractionalVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random coverage, cut or modular oracle with `n` elements.
pub fn random_oracle<R: Rng>(rng: &mut R, n: usize) -> ValueOracle {
    match rng.random_range(0..3) {
        0 => {
            let universe = rng.random_range(1..=2 * n + 2);
            let density = rng.random_range(0.1..0.6);
            ValueOracle::new(random_coverage(rng, n, universe, density, (0.1, 2.0)).unwrap())
        }
        1 => {
            let prob = rng.random_range(0.2..0.8);
            ValueOracle::new(random_cut(rng, n, prob, 2.0).unwrap())
        }
        _ => {
            let weights = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            ValueOracle::new(Modular::new(weights).unwrap())
        }
    }
}

/// Random non-monotone (cut) or monotone (coverage) oracle.
pub fn random_submodular<R: Rng>(rng: &mut R, n: usize) -> ValueOracle {
    if rng.random_bool(0.5) {
        ValueOracle::new(random_cut(rng, n, 0.5, 1.0).unwrap())
    } else {
        ValueOracle::new(random_coverage(rng, n, 2 * n, 0.3, (0.5, 2.0)).unwrap())
    }
}

pub fn mask_to_set(mask: u64) -> Vec<ElementId> {
    (0..64).filter(|&e| mask >> e & 1 == 1).collect()
}

/// `F(x)` straight from the definition: sum over all subsets of the support.
pub fn multilinear_by_definition(f: &dyn SetFunction, x: &FractionalVector) -> f64 {
    let coords: Vec<(ElementId, f64)> = x.iter().collect();
    let mut total = 0.0;
    for mask in 0u64..1 << coords.len() {
        let mut prob = 1.0;
        let mut set = Vec::new();
        for (bit, &(e, v)) in coords.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                prob *= v;
                set.push(e);
            } else {
                prob *= 1.0 - v;
            }
        }
        if prob != 0.0 {
            total += prob * f.evaluate(&set);
        }
    }
    total
}

/// Lovász extension as `∫_0^1 f({e : x_e ≥ λ}) dλ`, integrating the
/// piecewise-constant integrand between consecutive breakpoints.
pub fn lovasz_by_integral(f: &dyn SetFunction, x: &FractionalVector) -> f64 {
    let mut cuts: Vec<f64> = x.iter().map(|(_, v)| v).chain([0.0, 1.0]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let level: Vec<ElementId> = x.iter().filter(|&(_, v)| v >= mid).map(|(e, _)| e).collect();
        total += (w[1] - w[0]) * f.evaluate(&level);
    }
    total
}

/// Exhaustive optimum over bitmasks of `ground` (popcount ≤ k), evaluating
/// the set function directly. Returns the value only.
pub fn optimum_by_masks(f: &dyn SetFunction, ground: &[ElementId], k: usize) -> f64 {
    let g = ground.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u64..1 << g {
        if mask.count_ones() as usize > k {
            continue;
        }
        let set: Vec<ElementId> = (0..g).filter(|&b| mask >> b & 1 == 1).map(|b| ground[b]).collect();
        best = best.max(f.evaluate(&set));
    }
    best
}

/// Random point of `[0,1]^n` restricted to `support`.
pub fn random_point<R: Rng>(rng: &mut R, support: &[ElementId]) -> FractionalVector {
    FractionalVector::from_pairs(support.iter().map(|&e| (e, rng.random::<f64>()))).unwrap()
}

/// Random fractional point with `|x|_1 ≤ k` over a random subset of `0..n`.
pub fn random_feasible_point<R: Rng>(rng: &mut R, n: usize, k: usize) -> FractionalVector {
    let mut pairs: Vec<(ElementId, f64)> = Vec::new();
    for e in 0..n {
        if rng.random_bool(0.7) {
            pairs.push((e, rng.random_range(0.05..0.95)));
        }
    }
    let l1: f64 = pairs.iter().map(|p| p.1).sum();
    if l1 > k as f64 {
        let scale = k as f64 / l1 * (1.0 - 1e-9);
        for p in &mut pairs {
            p.1 *= scale;
        }
    }
    FractionalVector::from_pairs(pairs).unwrap()
}

/// Random permutation of `0..n`.
pub fn random_stream<R: Rng>(rng: &mut R, n: usize) -> Vec<ElementId> {
    use rand::seq::SliceRandom;
    let mut order: Vec<ElementId> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Structure check written independently of the crate: all non-zero
/// coordinates equal `p` but at most one, which may only differ when the
/// norm has reached `k`.
pub fn structure_ok(x: &FractionalVector, p: f64, k: usize) -> bool {
    let odd = x.iter().filter(|&(_, v)| v != p).count();
    let l1: f64 = x.iter().map(|(_, v)| v).sum();
    let full = (l1 - k as f64).abs() <= 1e-9;
    odd == 0 || (odd == 1 && full)
}
