//! Random forest and AdaBoost ensembles of privacy-guided trees.
//!
//! The sensitivity constraints are applied separately to every member tree:
//! each tree keeps its own split counters and level checks, so the audit of
//! an ensemble is simply the audit of all of its members.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tree::{self, DecisionTree, ImportanceVector, SensitivitySpec, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    RandomForest,
    AdaBoost,
}

/// Per-node feature subsampling policy for member trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    /// Forests use ceil(sqrt(d)); boosting uses every feature.
    Auto,
    All,
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_trees: usize,
    /// Train each forest tree on a bootstrap resample of the data.
    pub bootstrap: bool,
    pub feature_subsample: FeatureSubsample,
    pub base: TreeConfig,
    pub seed: u64,
}

impl EnsembleConfig {
    pub fn forest_defaults() -> Self {
        EnsembleConfig {
            n_trees: 100,
            bootstrap: true,
            feature_subsample: FeatureSubsample::Auto,
            base: TreeConfig::default(),
            seed: 0,
        }
    }

    pub fn adaboost_defaults() -> Self {
        EnsembleConfig {
            n_trees: 50,
            bootstrap: false,
            feature_subsample: FeatureSubsample::Auto,
            base: TreeConfig::default(),
            seed: 0,
        }
    }

    fn resolve_subsample(&self, kind: EnsembleKind, width: usize) -> Result<Option<usize>> {
        let resolved = match self.feature_subsample {
            FeatureSubsample::Auto => match kind {
                EnsembleKind::RandomForest => Some((width as f64).sqrt().ceil() as usize),
                EnsembleKind::AdaBoost => None,
            },
            FeatureSubsample::All => None,
            FeatureSubsample::Count(k) => Some(k),
        };
        if let Some(k) = resolved {
            if k == 0 || k > width {
                return Err(Error::Config(format!(
                    "feature_subsample {k} out of range for {width} features"
                )));
            }
        }
        Ok(resolved)
    }
}

/// A bag of trees with per-tree weights: uniform for forests, SAMME stage
/// weights for AdaBoost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub kind: EnsembleKind,
    pub config: EnsembleConfig,
    pub sensitivity: SensitivitySpec,
    trees: Vec<DecisionTree>,
    tree_weights: Vec<f64>,
    /// Weighted training error of each boosting stage (empty for forests).
    stage_errors: Vec<f64>,
}

impl EnsembleModel {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn tree_weights(&self) -> &[f64] {
        &self.tree_weights
    }

    pub fn stage_errors(&self) -> &[f64] {
        &self.stage_errors
    }

    pub fn n_classes(&self) -> usize {
        self.trees[0].n_classes()
    }

    pub fn n_features(&self) -> usize {
        self.trees[0].n_features()
    }

    /// Weighted vote over member trees; ties go to the lowest class id.
    pub fn predict(&self, row: &[f64]) -> Result<u32> {
        let mut scores = vec![0.0; self.n_classes()];
        for (tree, weight) in self.trees.iter().zip(&self.tree_weights) {
            scores[tree.predict(row)? as usize] += weight;
        }
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = c;
            }
        }
        Ok(best as u32)
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        let labels = ds.dense_labels()?;
        let mut hits = 0usize;
        for i in 0..ds.n() {
            if self.predict(ds.row(i))? == labels[i] {
                hits += 1;
            }
        }
        Ok(hits as f64 / ds.n() as f64)
    }

    /// Tree-weight-weighted mean of per-tree normalized importance vectors,
    /// renormalized to sum to 1. Trees that never split contribute zeros.
    pub fn importance(&self) -> ImportanceVector {
        let per_tree: Vec<ImportanceVector> =
            self.trees.iter().map(|t| t.importance()).collect();
        aggregate_importance(&per_tree, &self.tree_weights, self.n_features())
    }

    /// Audits every member tree plus the ensemble's own weight invariants.
    pub fn audit(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Audit("ensemble has no trees".into()));
        }
        if self.trees.len() != self.tree_weights.len() {
            return Err(Error::Audit("tree/weight length mismatch".into()));
        }
        if self.tree_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Audit("tree weights must be finite and >= 0".into()));
        }
        if !self.tree_weights.iter().any(|w| *w > 0.0) {
            return Err(Error::Audit("no positive tree weight".into()));
        }
        for (i, tree) in self.trees.iter().enumerate() {
            tree.audit()
                .map_err(|e| Error::Audit(format!("tree {i}: {e}")))?;
        }
        Ok(())
    }
}

pub(crate) fn aggregate_importance(
    per_tree: &[ImportanceVector],
    weights: &[f64],
    width: usize,
) -> ImportanceVector {
    let total_weight: f64 = weights.iter().sum();
    if total_weight <= 0.0 {
        return ImportanceVector::zeros(width);
    }
    let mut mean = vec![0.0; width];
    for (imp, &w) in per_tree.iter().zip(weights) {
        for f in 0..width {
            mean[f] += w * imp.get(f) / total_weight;
        }
    }
    ImportanceVector::from_raw(mean)
}

/// Trains a random forest: each tree fits a bootstrap resample (when enabled)
/// with per-node feature subsampling, under the shared sensitivity spec.
/// Per-tree seeds derive deterministically from the master seed.
pub fn train_forest(
    data: &Dataset,
    sensitivity: &SensitivitySpec,
    config: &EnsembleConfig,
) -> Result<EnsembleModel> {
    if config.n_trees == 0 {
        return Err(Error::Config("n_trees must be >= 1".into()));
    }
    let subsample = config.resolve_subsample(EnsembleKind::RandomForest, data.width())?;
    data.ensure_complete()?;

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let tree_seeds: Vec<(u64, u64)> = (0..config.n_trees)
        .map(|_| (master.random(), master.random()))
        .collect();

    let trees: Vec<DecisionTree> = tree_seeds
        .par_iter()
        .map(|&(bootstrap_seed, tree_seed)| {
            let rows: Vec<usize> = if config.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(bootstrap_seed);
                (0..data.n()).map(|_| rng.random_range(0..data.n())).collect()
            } else {
                (0..data.n()).collect()
            };
            let tree_config = TreeConfig {
                feature_subsample: subsample,
                seed: tree_seed,
                ..config.base.clone()
            };
            tree::train_on(data, rows, None, sensitivity, &tree_config)
        })
        .collect::<Result<_>>()?;

    let model = EnsembleModel {
        kind: EnsembleKind::RandomForest,
        config: config.clone(),
        sensitivity: sensitivity.clone(),
        tree_weights: vec![1.0; trees.len()],
        trees,
        stage_errors: Vec::new(),
    };
    debug_assert!(model.audit().is_ok());
    Ok(model)
}

/// Trains a SAMME AdaBoost ensemble: each stage fits a privacy-guided tree to
/// the current sample weights (weights enter the impurity computations as
/// class-mass sums), then reweights misclassified samples by
/// `exp(alpha)` with stage weight `alpha = ln((1-err)/err) + ln(K-1)`.
/// Stops early on a perfect stage or one no better than chance.
pub fn train_adaboost(
    data: &Dataset,
    sensitivity: &SensitivitySpec,
    config: &EnsembleConfig,
) -> Result<EnsembleModel> {
    if config.n_trees == 0 {
        return Err(Error::Config("n_trees must be >= 1".into()));
    }
    let subsample = config.resolve_subsample(EnsembleKind::AdaBoost, data.width())?;
    data.ensure_complete()?;
    let labels = data.dense_labels()?;
    let n = data.n();
    let k = data.n_classes();
    if k < 2 {
        return Err(Error::Degenerate("boosting needs at least two classes".into()));
    }
    let chance = 1.0 - 1.0 / k as f64;

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = vec![1.0 / n as f64; n];
    let mut trees = Vec::new();
    let mut alphas = Vec::new();
    let mut stage_errors = Vec::new();

    for stage in 0..config.n_trees {
        let tree_config = TreeConfig {
            feature_subsample: subsample,
            seed: master.random(),
            ..config.base.clone()
        };
        let all_rows: Vec<usize> = (0..n).collect();
        let tree = tree::train_on(data, all_rows, Some(&weights), sensitivity, &tree_config)?;

        let mut err = 0.0;
        let mut misclassified = vec![false; n];
        for i in 0..n {
            if tree.predict(data.row(i))? != labels[i] {
                misclassified[i] = true;
                err += weights[i];
            }
        }

        if err >= chance {
            if stage == 0 {
                return Err(Error::Degenerate(format!(
                    "first boosting stage has weighted error {err:.4} >= {chance:.4} \
                     (no better than chance for {k} classes)"
                )));
            }
            break; // discard this stage
        }
        let clamped = err.max(1e-10);
        let alpha = ((1.0 - clamped) / clamped).ln() + (k as f64 - 1.0).ln();
        trees.push(tree);
        alphas.push(alpha);
        stage_errors.push(err);
        if err <= 0.0 {
            break; // perfect stage, later stages would see zero weight shift
        }

        let boost = alpha.exp();
        let mut total = 0.0;
        for i in 0..n {
            if misclassified[i] {
                weights[i] *= boost;
            }
            total += weights[i];
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
    }

    let model = EnsembleModel {
        kind: EnsembleKind::AdaBoost,
        config: config.clone(),
        sensitivity: sensitivity.clone(),
        trees,
        tree_weights: alphas,
        stage_errors,
    };
    debug_assert!(model.audit().is_ok());
    Ok(model)
}
