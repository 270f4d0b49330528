//! JSON instance files.
//!
//! ```json
//! {
//!   "id": "hard-k3-h2",
//!   "type": "hard",
//!   "n": 5,
//!   "k": 3,
//!   "arrival_order": [3, 0, 2, 1, 4],
//!   "h": 2
//! }
//! ```
//!
//! The `type` tag selects the objective and its parameters:
//!
//! | type       | parameters                                            |
//! |------------|-------------------------------------------------------|
//! | `coverage` | `universe_weights: [f64]`, `covers: [[usize]]`        |
//! | `cut`      | `edges: [[a, b, weight]]`                             |
//! | `modular`  | `weights: [f64]`                                      |
//! | `hard`     | `h: usize` (the cardinality bound `k` is shared)      |
//!
//! `n` is the ground-set size and `arrival_order` a permutation of `0..n`
//! giving the stream order.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{Coverage, Cut, ElementId, HardInstance, Modular, SetFunction, ValueOracle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Coverage {
        universe_weights: Vec<f64>,
        covers: Vec<Vec<usize>>,
    },
    Cut {
        edges: Vec<(ElementId, ElementId, f64)>,
    },
    Modular {
        weights: Vec<f64>,
    },
    Hard {
        h: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub id: String,
    #[serde(flatten)]
    pub objective: ObjectiveSpec,
    pub n: usize,
    pub k: usize,
    pub arrival_order: Vec<ElementId>,
}

impl InstanceFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let inst: InstanceFile = serde_json::from_str(&text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Canonical serialization; byte-identical for equal instances.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n];
        for &e in &self.arrival_order {
            if e >= self.n || std::mem::replace(&mut seen[e], true) {
                return Err(Error::input(format!(
                    "instance {}: arrival_order is not a permutation of 0..{}",
                    self.id, self.n
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::input(format!(
                "instance {}: arrival_order misses elements of 0..{}",
                self.id, self.n
            )));
        }
        let built = self.build_function()?;
        if built.ground_size() != self.n {
            return Err(Error::input(format!(
                "instance {}: declared n = {} but the objective has {} elements",
                self.id,
                self.n,
                built.ground_size()
            )));
        }
        Ok(())
    }

    pub fn build_function(&self) -> Result<Arc<dyn SetFunction>> {
        Ok(match &self.objective {
            ObjectiveSpec::Coverage { universe_weights, covers } => {
                Arc::new(Coverage::new(universe_weights.clone(), covers.clone())?)
            }
            ObjectiveSpec::Cut { edges } => Arc::new(Cut::new(self.n, edges.clone())?),
            ObjectiveSpec::Modular { weights } => Arc::new(Modular::new(weights.clone())?),
            ObjectiveSpec::Hard { h } => Arc::new(HardInstance::new(self.k, *h)?),
        })
    }

    /// Fresh oracle with its own call counter.
    pub fn oracle(&self, memo: bool) -> Result<ValueOracle> {
        let oracle = ValueOracle::from_arc(self.build_function()?);
        if memo {
            oracle.with_memo()
        } else {
            Ok(oracle)
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.objective {
            ObjectiveSpec::Coverage { .. } => "coverage",
            ObjectiveSpec::Cut { .. } => "cut",
            ObjectiveSpec::Modular { .. } => "modular",
            ObjectiveSpec::Hard { .. } => "hard",
        }
    }
}
