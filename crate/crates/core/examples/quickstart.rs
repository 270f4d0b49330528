//! Runs the threshold-grid algorithm on a small weighted cut and compares
//! it with the best set of size at most `k`.

use mlsieve::objectives::make_cut;
use mlsieve::offline::{brute_force, DEFAULT_MAX_SUBSETS};
use mlsieve::sieve::run_auto_tau;
use mlsieve::SieveParams;

fn main() -> mlsieve::Result<()> {
    let edges = vec![(0, 1, 1.0), (1, 2, 2.0), (2, 3, 1.5), (3, 0, 0.5), (0, 2, 1.0), (4, 1, 3.0), (5, 3, 2.5)];
    let f = make_cut(6, edges)?;
    let k = 2;
    let params = SieveParams::new(k, 0.25, 1.0, 0.125)?;
    let (set, diag) = run_auto_tau(&f, [3, 0, 5, 2, 4, 1], &params, 42)?;
    let best = brute_force(&f, &(0..6).collect::<Vec<_>>(), k, DEFAULT_MAX_SUBSETS)?;
    println!("streamed set {set:?} with value {}", diag.value);
    println!("optimum {:?} with value {}", best.set, best.value);
    println!("thresholds {}, stored {}, oracle calls {}", diag.max_thresholds, diag.max_stored, diag.oracle_calls);
    Ok(())
}
