//! Semi-streaming maximization of non-negative (possibly non-monotone)
//! submodular functions under a cardinality constraint.
//!
//! The central idea is to make threshold decisions on the *multilinear
//! extension* `F` of the objective rather than on `f` itself: an arriving
//! element is accepted with a fixed fraction `p` whenever its partial
//! derivative `∂_u F(x)` clears `c·τ/k`. Because the decision depends on an
//! expectation, it is deterministic, while the final rounding supplies the
//! randomness a non-monotone objective needs.
//!
//! Module map:
//!
//! - [`objectives`]: value oracles (coverage, cut, modular, the adversarial
//!   instance) with call accounting and exhaustive property checks.
//! - [`instance`]: the JSON instance file format.
//! - [`extensions`]: fractional vectors, exact and sampled multilinear
//!   extension, partial derivatives, the Lovász extension.
//! - [`rounding`]: swap rounding in the uniform-matroid polytope.
//! - [`offline`]: brute force and Random Greedy for the stored support.
//! - [`sieve`]: the streaming algorithms (known `τ`, threshold grid, sampled
//!   derivatives) and parameter selection.
//! - [`harness`]: instance generation, baselines, the experiment runner and
//!   report aggregation used by the `mlsieve` binary.

pub mod error;
pub mod extensions;
pub mod harness;
pub mod instance;
pub mod objectives;
pub mod offline;
pub mod rounding;
pub mod seed;
pub mod sieve;

pub use error::{Error, Result};
pub use extensions::FractionalVector;
pub use objectives::{ElementId, SetFunction, ValueOracle};
pub use sieve::{RunDiagnostics, SieveParams};
