//! Privacy-guided training of tree-based models.
//!
//! Trains decision trees, random forests and AdaBoost ensembles under
//! per-feature constraints (weight penalties, level thresholds, split
//! budgets) that reduce how much the model relies on designated sensitive
//! features, and evaluates the trained models against baseline, black-box
//! and white-box attribute-inference attacks.

pub mod attack;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod mlp;
pub mod model;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
