//! Offline solvers for `max f(S)` over `S ⊆ ground`, `|S| ≤ k`.
//!
//! The streaming algorithms call these on the support of their fractional
//! solution, which holds at most `⌈k/p⌉` elements.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{ElementId, ValueOracle};

/// Default work limit for brute force, in subsets evaluated.
pub const DEFAULT_MAX_SUBSETS: u128 = 2_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineMode {
    #[default]
    BruteForce,
    RandomGreedy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OfflineSolution {
    pub set: Vec<ElementId>,
    pub value: f64,
}

/// `Σ_{j ≤ k} C(g, j)`, saturating.
pub fn subsets_up_to(g: usize, k: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for j in 0..=k.min(g) {
        total = total.saturating_add(binom);
        binom = binom.saturating_mul((g - j) as u128) / (j as u128 + 1);
    }
    total
}

fn normalized(ground: &[ElementId]) -> Vec<ElementId> {
    let mut g = ground.to_vec();
    g.sort_unstable();
    g.dedup();
    g
}

/// Exact maximizer by exhaustive search.
///
/// Subsets are visited in lexicographic order of their sorted id lists and
/// only strict improvements replace the incumbent, so ties resolve to the
/// lexicographically smallest optimal set.
pub fn brute_force(
    oracle: &ValueOracle,
    ground: &[ElementId],
    k: usize,
    max_subsets: u128,
) -> Result<OfflineSolution> {
    let ground = normalized(ground);
    let n = oracle.ground_size();
    if let Some(&bad) = ground.iter().find(|&&e| e >= n) {
        return Err(Error::input(format!("element {bad} is outside the ground set 0..{n}")));
    }
    let work = subsets_up_to(ground.len(), k);
    if work > max_subsets {
        return Err(Error::Capacity {
            what: "brute force",
            required: work,
            limit: max_subsets,
            hint: "; use random_greedy for large supports",
        });
    }

    let mut search = Search {
        oracle,
        ground: &ground,
        k,
        current: Vec::with_capacity(k),
        best: Vec::new(),
        best_value: f64::NEG_INFINITY,
        masks: n <= 64,
    };
    search.visit(0, 0)?;
    Ok(OfflineSolution { set: search.best, value: search.best_value })
}

struct Search<'a> {
    oracle: &'a ValueOracle,
    ground: &'a [ElementId],
    k: usize,
    current: Vec<ElementId>,
    best: Vec<ElementId>,
    best_value: f64,
    masks: bool,
}

impl Search<'_> {
    fn visit(&mut self, start: usize, mask: u64) -> Result<()> {
        let value = if self.masks {
            self.oracle.value_mask_unchecked(mask)
        } else {
            self.oracle.value(&self.current)?
        };
        if value > self.best_value {
            self.best_value = value;
            self.best.clone_from(&self.current);
        }
        if self.current.len() == self.k {
            return Ok(());
        }
        for idx in start..self.ground.len() {
            let e = self.ground[idx];
            self.current.push(e);
            let next = if self.masks { mask | 1u64 << e } else { 0 };
            self.visit(idx + 1, next)?;
            self.current.pop();
        }
        Ok(())
    }
}

/// Random Greedy: `k` rounds; each round ranks the remaining elements by
/// marginal gain together with `k` dummy elements of gain 0, keeps the top
/// `k` and adds one of them uniformly at random (a dummy adds nothing).
///
/// Ties rank real elements before dummies, then by id.
pub fn random_greedy<R: Rng + ?Sized>(
    oracle: &ValueOracle,
    ground: &[ElementId],
    k: usize,
    rng: &mut R,
) -> Result<OfflineSolution> {
    let mut remaining = normalized(ground);
    let mut chosen: Vec<ElementId> = Vec::with_capacity(k);
    let mut current_value = oracle.value(&chosen)?;
    let mut with = Vec::with_capacity(k + 1);
    for _ in 0..k {
        if remaining.is_empty() {
            break;
        }
        let mut gains: Vec<(f64, ElementId, f64)> = Vec::with_capacity(remaining.len());
        for &u in &remaining {
            with.clear();
            with.extend_from_slice(&chosen);
            with.push(u);
            let value = oracle.value(&with)?;
            gains.push((value - current_value, u, value));
        }
        gains.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let real_in_top = gains.iter().take(k).take_while(|g| g.0 >= 0.0).count();
        let pick = rng.random_range(0..k);
        if pick < real_in_top {
            let (_, u, value) = gains[pick];
            chosen.push(u);
            remaining.retain(|&e| e != u);
            current_value = value;
        }
    }
    chosen.sort_unstable();
    let value = oracle.value(&chosen)?;
    Ok(OfflineSolution { set: chosen, value })
}

/// Dispatches to the configured solver.
pub fn solve<R: Rng + ?Sized>(
    mode: OfflineMode,
    oracle: &ValueOracle,
    ground: &[ElementId],
    k: usize,
    max_subsets: u128,
    rng: &mut R,
) -> Result<OfflineSolution> {
    match mode {
        OfflineMode::BruteForce => brute_force(oracle, ground, k, max_subsets),
        OfflineMode::RandomGreedy => random_greedy(oracle, ground, k, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_cut, make_hard_instance, make_modular, HardInstance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn subset_counts() {
        assert_eq!(subsets_up_to(5, 0), 1);
        assert_eq!(subsets_up_to(5, 2), 1 + 5 + 10);
        assert_eq!(subsets_up_to(3, 7), 8);
        assert_eq!(subsets_up_to(24, 6), 190_051);
    }

    #[test]
    fn brute_force_on_hard_instance() {
        let hard = HardInstance::new(3, 2).unwrap();
        let expect = vec![hard.u(1), hard.u(2), hard.w()];
        let f = make_hard_instance(3, 2).unwrap();
        let sol = brute_force(&f, &[0, 1, 2, 3, 4], 3, DEFAULT_MAX_SUBSETS).unwrap();
        assert_eq!(sol.value, 5.0);
        assert_eq!(sol.set, expect);
    }

    #[test]
    fn brute_force_k_zero_and_triangle() {
        let tri = make_cut(3, vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let sol = brute_force(&tri, &[0, 1, 2], 0, DEFAULT_MAX_SUBSETS).unwrap();
        assert!(sol.set.is_empty());
        assert_eq!(sol.value, 0.0);
        let sol = brute_force(&tri, &[0, 1, 2], 2, DEFAULT_MAX_SUBSETS).unwrap();
        assert_eq!(sol.value, 2.0);
        // Lexicographically smallest optimum.
        assert_eq!(sol.set, vec![0]);
    }

    #[test]
    fn brute_force_capacity() {
        let f = make_modular(vec![1.0; 40]).unwrap();
        let ground: Vec<_> = (0..40).collect();
        assert!(matches!(
            brute_force(&f, &ground, 10, DEFAULT_MAX_SUBSETS),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn random_greedy_on_modular_weights() {
        // Round 1 picks 3 or 2; round 2 picks from the top two of what is
        // left. Outcomes {3,2}, {3,1}, {2,3}, {2,1} with probability 1/4
        // each: expected value (5 + 4 + 5 + 3) / 4 = 4.25.
        let f = make_modular(vec![3.0, 2.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let runs = 40_000;
        let mut total = 0.0;
        for _ in 0..runs {
            let sol = random_greedy(&f, &[0, 1, 2], 2, &mut rng).unwrap();
            assert!(sol.set.len() <= 2);
            assert!([3.0, 4.0, 5.0].contains(&sol.value), "{:?}", sol);
            total += sol.value;
        }
        let mean = total / runs as f64;
        // sd of one draw is ~0.83; 4 standard errors ≈ 0.017.
        assert!((mean - 4.25).abs() < 0.02, "{mean}");
    }

    #[test]
    fn random_greedy_is_feasible_when_k_exceeds_ground() {
        let f = make_modular(vec![1.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let sol = random_greedy(&f, &[0, 1], 5, &mut rng).unwrap();
            assert!(sol.set.len() <= 5 && sol.value >= 0.0);
        }
    }

    #[test]
    fn random_greedy_skips_negative_gains() {
        // On a single edge, after taking one endpoint the other has gain -1.
        let f = make_cut(2, vec![(0, 1, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let sol = random_greedy(&f, &[0, 1], 2, &mut rng).unwrap();
            assert!(sol.set.len() <= 1);
        }
    }
}
