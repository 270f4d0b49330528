//! Swap rounding in the uniform-matroid polytope `{x ∈ [0,1]^N : |x|_1 ≤ k}`.
//!
//! Two fractional coordinates are merged at a time. The merge moves mass
//! along `e_i − e_j`, keeps `x_i + x_j` fixed and sends one of the two to an
//! integral value; the direction is chosen at random so that every
//! coordinate's expectation is preserved. Since `F` is convex along
//! `e_i − e_j` for submodular `f`, `E[f(S)] ≥ F(x)`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extensions::FractionalVector;
use crate::objectives::ElementId;

/// Coordinates within this distance of 0 or 1 are snapped.
pub const SNAP_TOLERANCE: f64 = 1e-12;

const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub first: ElementId,
    pub second: ElementId,
    pub before: (f64, f64),
    pub after: (f64, f64),
    /// Element left holding the fractional remainder (or the whole mass).
    pub survivor: ElementId,
    /// Probability of the outcome that was drawn.
    pub probability: f64,
}

/// The last fractional coordinate, if any, is rounded on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalCoin {
    pub element: ElementId,
    pub probability: f64,
    pub kept: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundingTrace {
    pub steps: Vec<MergeStep>,
    pub final_coin: Option<FinalCoin>,
    pub set: Vec<ElementId>,
}

impl RoundingTrace {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty() && self.final_coin.is_none()
    }
}

/// Rounds `x` to a set `S ⊆ supp(x)` with `|S| ≤ k` and `Pr[u ∈ S] = x_u`.
///
/// Pairs are taken in increasing id order; only the merge directions are
/// random. No padding is applied when `|x|_1 < k`.
pub fn swap_round<R: Rng + ?Sized>(
    x: &FractionalVector,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<ElementId>, RoundingTrace)> {
    if x.l1() > k as f64 + FEASIBILITY_SLACK {
        return Err(Error::Infeasible { l1: x.l1(), k });
    }
    let mut chosen: Vec<ElementId> = Vec::new();
    let mut fractional: BTreeMap<ElementId, f64> = BTreeMap::new();
    for (e, v) in x.iter() {
        if v >= 1.0 - SNAP_TOLERANCE {
            chosen.push(e);
        } else if v > SNAP_TOLERANCE {
            fractional.insert(e, v);
        }
    }

    let mut trace = RoundingTrace::default();
    while fractional.len() >= 2 {
        let mut it = fractional.iter();
        let (&i, &a) = it.next().expect("two entries");
        let (&j, &b) = it.next().expect("two entries");
        let sum = a + b;
        let (after, survivor, probability) = if sum <= 1.0 {
            let p_i = a / sum;
            if rng.random::<f64>() < p_i {
                ((sum, 0.0), i, p_i)
            } else {
                ((0.0, sum), j, 1.0 - p_i)
            }
        } else {
            let p_i = (1.0 - b) / (2.0 - sum);
            if rng.random::<f64>() < p_i {
                ((1.0, sum - 1.0), j, p_i)
            } else {
                ((sum - 1.0, 1.0), i, 1.0 - p_i)
            }
        };
        trace.steps.push(MergeStep {
            first: i,
            second: j,
            before: (a, b),
            after,
            survivor,
            probability,
        });
        for (e, v) in [(i, after.0), (j, after.1)] {
            if v >= 1.0 - SNAP_TOLERANCE {
                fractional.remove(&e);
                chosen.push(e);
            } else if v <= SNAP_TOLERANCE {
                fractional.remove(&e);
            } else {
                fractional.insert(e, v);
            }
        }
    }
    if let Some((&e, &v)) = fractional.iter().next() {
        let kept = rng.random::<f64>() < v;
        if kept {
            chosen.push(e);
        }
        trace.final_coin = Some(FinalCoin { element: e, probability: v, kept });
    }

    chosen.sort_unstable();
    if chosen.len() > k {
        return Err(Error::Invariant(format!(
            "swap rounding produced {} elements for k = {k}",
            chosen.len()
        )));
    }
    trace.set = chosen.clone();
    Ok((chosen, trace))
}
