//! CART-style decision trees trained under privacy-guided constraints.
//!
//! Three constraint kinds can be attached to individual features:
//!
//! * a **weight** in `[0,1]` that penalizes the post-split impurity of any
//!   candidate split on the feature (weight 0 = non-sensitive, classical
//!   behaviour);
//! * a **level threshold**: the feature may not be split above that level of
//!   the tree, pushing its splits toward the bottom where they affect fewer
//!   samples;
//! * a **split budget**: a per-tree cap on the number of internal nodes that
//!   split on the feature, consumed in growth order. Budgets require
//!   breadth-first growth so the counter is spent evenly across the tree
//!   instead of being exhausted by one subtree.
//!
//! Feature importance is the impurity decrease of each split weighted by the
//! fraction of training samples reaching it, summed per feature and
//! normalized to sum to 1. The trainer accumulates it incrementally; an
//! independent post-hoc traversal of the stored nodes recomputes it.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCriterion {
    /// Shannon entropy, base-2 logarithm.
    Entropy,
    Gini,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthOrder {
    DepthFirst,
    BreadthFirst,
}

/// What the level threshold counts.
///
/// `Depth` is distance from the root: a sensitive feature may split a node
/// only at depth >= threshold. `GrowthRank` counts nodes in creation order
/// instead: a sensitive feature may split node `i` only when `i`'s creation
/// rank is >= threshold, which keeps the parameter meaningful for thresholds
/// far larger than any plausible depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelSemantics {
    Depth,
    GrowthRank,
}

/// Per-feature privacy constraints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSensitivity {
    #[serde(default)]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_threshold: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_budget: Option<u32>,
}

/// Privacy configuration for a whole schema: features without an entry are
/// non-sensitive (weight 0, no thresholds).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    entries: BTreeMap<usize, FeatureSensitivity>,
}

impl SensitivitySpec {
    pub fn none() -> Self {
        SensitivitySpec::default()
    }

    pub fn with_weight(mut self, feature: usize, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Config(format!(
                "sensitivity weight must be in [0,1], got {weight}"
            )));
        }
        self.entries.entry(feature).or_default().weight = weight;
        Ok(self)
    }

    pub fn with_level_threshold(mut self, feature: usize, threshold: u32) -> Self {
        self.entries.entry(feature).or_default().level_threshold = Some(threshold);
        self
    }

    pub fn with_split_budget(mut self, feature: usize, budget: u32) -> Self {
        self.entries.entry(feature).or_default().split_budget = Some(budget);
        self
    }

    pub fn weight(&self, feature: usize) -> f64 {
        self.entries.get(&feature).map_or(0.0, |e| e.weight)
    }

    pub fn level_threshold(&self, feature: usize) -> Option<u32> {
        self.entries.get(&feature).and_then(|e| e.level_threshold)
    }

    pub fn split_budget(&self, feature: usize) -> Option<u32> {
        self.entries.get(&feature).and_then(|e| e.split_budget)
    }

    pub fn has_budgets(&self) -> bool {
        self.entries.values().any(|e| e.split_budget.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &FeatureSensitivity)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        for (f, e) in &self.entries {
            if *f >= n_features {
                return Err(Error::Config(format!(
                    "sensitivity entry for feature {f} out of range ({n_features} features)"
                )));
            }
            if !(0.0..=1.0).contains(&e.weight) {
                return Err(Error::Config(format!(
                    "sensitivity weight for feature {f} must be in [0,1], got {}",
                    e.weight
                )));
            }
        }
        Ok(())
    }
}

/// Training parameters of a single tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub criterion: SplitCriterion,
    pub max_depth: Option<u32>,
    pub min_samples_split: usize,
    pub growth_order: GrowthOrder,
    pub level_semantics: LevelSemantics,
    /// Number of features drawn at random as split candidates per node;
    /// `None` considers every eligible feature.
    pub feature_subsample: Option<usize>,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            criterion: SplitCriterion::Entropy,
            max_depth: None,
            min_samples_split: 2,
            growth_order: GrowthOrder::DepthFirst,
            level_semantics: LevelSemantics::Depth,
            feature_subsample: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Leaf {
        prediction: u32,
    },
    Split {
        feature: usize,
        /// Test is `value <= threshold` goes left.
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// One node of a trained tree. Trees are stored as a flat array in creation
/// order, the root at index 0; child links are array indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub depth: u32,
    /// Training rows reaching the node.
    pub n_samples: usize,
    pub impurity: f64,
    /// Per-class sample mass (plain counts when training is unweighted).
    pub class_counts: Vec<f64>,
    #[serde(flatten)]
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    /// Total sample mass at the node.
    pub fn mass(&self) -> f64 {
        self.class_counts.iter().sum()
    }
}

/// Per-feature importance values; `normalized` is false only for the all-zero
/// vector of a tree with no splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    values: Vec<f64>,
    normalized: bool,
}

impl ImportanceVector {
    /// Normalizes raw per-feature gains to sum to 1; an all-zero input stays
    /// all-zero with `normalized = false`.
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            ImportanceVector {
                values: raw.iter().map(|v| v / total).collect(),
                normalized: true,
            }
        } else {
            ImportanceVector {
                values: raw,
                normalized: false,
            }
        }
    }

    pub fn zeros(n: usize) -> Self {
        ImportanceVector {
            values: vec![0.0; n],
            normalized: false,
        }
    }

    pub fn get(&self, feature: usize) -> f64 {
        self.values[feature]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// A trained decision tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub config: TreeConfig,
    pub sensitivity: SensitivitySpec,
    schema: Vec<FeatureMeta>,
    label: FeatureMeta,
    n_training_samples: usize,
    nodes: Vec<Node>,
    /// Raw importance accumulated by the trainer; empty after deserialization.
    #[serde(skip)]
    incremental_gain: Vec<f64>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn schema(&self) -> &[FeatureMeta] {
        &self.schema
    }

    pub fn label_meta(&self) -> &FeatureMeta {
        &self.label
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn n_classes(&self) -> usize {
        self.label.categories.len()
    }

    pub fn total_training_samples(&self) -> usize {
        self.n_training_samples
    }

    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn n_internal(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "row has {} values, tree expects {}",
                row.len(),
                self.schema.len()
            )));
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::MissingData("row contains a missing value".into()));
        }
        Ok(())
    }

    fn walk(&self, row: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match self.nodes[idx].kind {
                NodeKind::Leaf { .. } => return idx,
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    /// Root-to-leaf traversal; returns the leaf's majority class.
    pub fn predict(&self, row: &[f64]) -> Result<u32> {
        self.check_row(row)?;
        match self.nodes[self.walk(row)].kind {
            NodeKind::Leaf { prediction } => Ok(prediction),
            NodeKind::Split { .. } => unreachable!("walk ends at a leaf"),
        }
    }

    /// As `predict`, but returns the reached leaf's id and training-sample
    /// count.
    pub fn leaf_path(&self, row: &[f64]) -> Result<(usize, usize)> {
        self.check_row(row)?;
        let idx = self.walk(row);
        Ok((idx, self.nodes[idx].n_samples))
    }

    /// Fraction of rows whose prediction matches the label.
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

    /// Per-feature importance recomputed from the stored nodes.
    pub fn importance(&self) -> ImportanceVector {
        let mut raw = vec![0.0; self.schema.len()];
        let root_mass = self.nodes[0].mass();
        if root_mass <= 0.0 {
            return ImportanceVector::zeros(self.schema.len());
        }
        for node in &self.nodes {
            if let NodeKind::Split {
                feature,
                left,
                right,
                ..
            } = node.kind
            {
                let mass = node.mass();
                if mass <= 0.0 {
                    continue;
                }
                let e_left = self.nodes[left].impurity * self.nodes[left].mass() / mass;
                let e_right = self.nodes[right].impurity * self.nodes[right].mass() / mass;
                let gain = node.impurity - e_left - e_right;
                raw[feature] += gain * mass / root_mass;
            }
        }
        ImportanceVector::from_raw(raw)
    }

    /// Importance as accumulated by the trainer while splitting, normalized.
    /// `None` for trees restored from disk (the trainer state is not
    /// persisted; use [`DecisionTree::importance`]).
    pub fn incremental_importance(&self) -> Option<ImportanceVector> {
        if self.incremental_gain.is_empty() && !self.nodes.is_empty() && self.nodes.len() > 1 {
            return None;
        }
        if self.incremental_gain.is_empty() {
            return Some(ImportanceVector::zeros(self.schema.len()));
        }
        Some(ImportanceVector::from_raw(self.incremental_gain.clone()))
    }

    /// Structural and constraint audit: checks node bookkeeping invariants
    /// and re-verifies that every split respects the recorded sensitivity
    /// (level thresholds under the configured semantics, split budgets).
    pub fn audit(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Audit(msg));
        if self.nodes.is_empty() {
            return fail("tree has no nodes".into());
        }
        if self.nodes[0].n_samples != self.n_training_samples {
            return fail(format!(
                "root has {} samples, tree records {}",
                self.nodes[0].n_samples, self.n_training_samples
            ));
        }
        let k = self.n_classes();
        let mut split_counts: BTreeMap<usize, u32> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.class_counts.len() != k {
                return fail(format!("node {idx} has {} class counts", node.class_counts.len()));
            }
            if node.impurity < 0.0 {
                return fail(format!("node {idx} has negative impurity"));
            }
            let populated = node.class_counts.iter().filter(|&&c| c > 0.0).count();
            if node.impurity == 0.0 && populated > 1 {
                return fail(format!("node {idx} has zero impurity but {populated} classes"));
            }
            match node.kind {
                NodeKind::Leaf { prediction } => {
                    if prediction as usize >= k {
                        return fail(format!("node {idx} predicts out-of-range class"));
                    }
                }
                NodeKind::Split {
                    feature,
                    left,
                    right,
                    ..
                } => {
                    if feature >= self.schema.len() {
                        return fail(format!("node {idx} splits out-of-range feature"));
                    }
                    if left <= idx || right <= idx || left >= self.nodes.len() || right >= self.nodes.len() {
                        return fail(format!("node {idx} has invalid child links"));
                    }
                    let (l, r) = (&self.nodes[left], &self.nodes[right]);
                    if l.depth != node.depth + 1 || r.depth != node.depth + 1 {
                        return fail(format!("node {idx} children have wrong depth"));
                    }
                    if l.n_samples + r.n_samples != node.n_samples {
                        return fail(format!("node {idx} sample counts do not add up"));
                    }
                    let scale = node.mass().max(1.0);
                    for c in 0..k {
                        let sum = l.class_counts[c] + r.class_counts[c];
                        if (sum - node.class_counts[c]).abs() > 1e-9 * scale {
                            return fail(format!("node {idx} class counts do not add up"));
                        }
                    }
                    if let Some(threshold) = self.sensitivity.level_threshold(feature) {
                        let level = match self.config.level_semantics {
                            LevelSemantics::Depth => node.depth,
                            LevelSemantics::GrowthRank => idx as u32,
                        };
                        if level < threshold {
                            return fail(format!(
                                "node {idx} splits sensitive feature {feature} at level {level} < {threshold}"
                            ));
                        }
                    }
                    *split_counts.entry(feature).or_insert(0) += 1;
                }
            }
        }
        for (feature, count) in &split_counts {
            if let Some(budget) = self.sensitivity.split_budget(*feature) {
                if *count > budget {
                    return fail(format!(
                        "feature {feature} split {count} times, budget {budget}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Impurity of a class-count vector: base-2 entropy or Gini index. A pure
/// node scores exactly 0.
pub fn impurity(class_counts: &[f64], criterion: SplitCriterion) -> Result<f64> {
    let total: f64 = class_counts.iter().sum();
    if !(total > 0.0) || class_counts.iter().any(|&c| c < 0.0) {
        return Err(Error::Domain(
            "impurity requires nonnegative counts with a positive total".into(),
        ));
    }
    Ok(impurity_unchecked(class_counts, total, criterion))
}

fn impurity_unchecked(class_counts: &[f64], total: f64, criterion: SplitCriterion) -> f64 {
    match criterion {
        SplitCriterion::Entropy => {
            let mut h = 0.0;
            for &c in class_counts {
                if c > 0.0 {
                    let p = c / total;
                    h -= p * p.log2();
                }
            }
            h
        }
        SplitCriterion::Gini => {
            let mut g = 1.0;
            for &c in class_counts {
                if c > 0.0 {
                    let p = c / total;
                    g -= p * p;
                }
            }
            g
        }
    }
}

/// Score of a candidate split, higher is better:
///
/// `S(parent) - (1 + w) * (E(left) + E(right))`
///
/// where `E(child) = S(child) * n_child / n_parent` and `w` is the split
/// feature's sensitivity weight. At weight 0 this is the classical
/// information gain; a positive weight inflates the post-split impurity the
/// search is trying to minimize, so the score strictly decreases in `w`
/// whenever the children are not pure, penalizing splits on sensitive
/// features.
pub fn split_score(
    node_counts: &[f64],
    left_counts: &[f64],
    right_counts: &[f64],
    feature: usize,
    sensitivity: &SensitivitySpec,
    criterion: SplitCriterion,
) -> Result<f64> {
    let parent = impurity(node_counts, criterion)?;
    let total: f64 = node_counts.iter().sum();
    let left_mass: f64 = left_counts.iter().sum();
    let right_mass: f64 = right_counts.iter().sum();
    let e_left = impurity(left_counts, criterion)? * left_mass / total;
    let e_right = impurity(right_counts, criterion)? * right_mass / total;
    let w = sensitivity.weight(feature);
    Ok(parent - (1.0 + w) * (e_left + e_right))
}

/// Trains a tree on the full dataset.
pub fn train(
    data: &Dataset,
    sensitivity: &SensitivitySpec,
    config: &TreeConfig,
) -> Result<DecisionTree> {
    let rows: Vec<usize> = (0..data.n()).collect();
    train_on(data, rows, None, sensitivity, config)
}

/// Trains a tree on a row subset (duplicates allowed, e.g. bootstrap
/// resamples) with optional per-row sample weights indexed by dataset row.
pub(crate) fn train_on(
    data: &Dataset,
    rows: Vec<usize>,
    sample_weights: Option<&[f64]>,
    sensitivity: &SensitivitySpec,
    config: &TreeConfig,
) -> Result<DecisionTree> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset("cannot train on zero rows".into()));
    }
    if config.min_samples_split < 2 {
        return Err(Error::Config(format!(
            "min_samples_split must be >= 2, got {}",
            config.min_samples_split
        )));
    }
    let width = data.width();
    if let Some(k) = config.feature_subsample {
        if k == 0 || k > width {
            return Err(Error::Config(format!(
                "feature_subsample {k} out of range for {width} features"
            )));
        }
    }
    sensitivity.validate(width)?;
    if sensitivity.has_budgets() && config.growth_order != GrowthOrder::BreadthFirst {
        return Err(Error::Config(
            "split budgets require breadth-first growth".into(),
        ));
    }
    if let Some(w) = sample_weights {
        if w.len() != data.n() {
            return Err(Error::Config(format!(
                "{} sample weights for {} rows",
                w.len(),
                data.n()
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("sample weights must be finite and >= 0".into()));
        }
    }
    let labels = data.dense_labels()?;
    for &r in &rows {
        if data.row(r).iter().any(|v| v.is_nan()) {
            return Err(Error::MissingData(format!("row {r} has a missing cell")));
        }
    }

    let mut builder = Builder {
        data,
        labels: &labels,
        weights: sample_weights,
        sensitivity,
        config,
        n_classes: data.n_classes(),
        nodes: Vec::new(),
        split_counts: vec![0u32; width],
        incremental_gain: vec![0.0; width],
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        root_mass: 0.0,
    };
    builder.run(rows)?;

    let tree = DecisionTree {
        config: config.clone(),
        sensitivity: sensitivity.clone(),
        schema: data.schema().to_vec(),
        label: data.label_meta().clone(),
        n_training_samples: builder.nodes[0].n_samples,
        nodes: builder.nodes,
        incremental_gain: builder.incremental_gain,
    };
    debug_assert!(tree.audit().is_ok());
    Ok(tree)
}

struct Builder<'a> {
    data: &'a Dataset,
    labels: &'a [u32],
    weights: Option<&'a [f64]>,
    sensitivity: &'a SensitivitySpec,
    config: &'a TreeConfig,
    n_classes: usize,
    nodes: Vec<Node>,
    split_counts: Vec<u32>,
    incremental_gain: Vec<f64>,
    rng: ChaCha8Rng,
    root_mass: f64,
}

struct BestSplit {
    score: f64,
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Children of a committed split (node index + rows), or `None` for a leaf.
type ExpandOutcome = Option<((usize, Vec<usize>), (usize, Vec<usize>))>;

impl<'a> Builder<'a> {
    fn weight_of(&self, row: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[row])
    }

    fn class_counts(&self, rows: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_classes];
        for &r in rows {
            counts[self.labels[r] as usize] += self.weight_of(r);
        }
        counts
    }

    fn new_node(&mut self, rows: &[usize], depth: u32) -> Result<usize> {
        let class_counts = self.class_counts(rows);
        let mass: f64 = class_counts.iter().sum();
        if self.nodes.is_empty() {
            if !(mass > 0.0) {
                return Err(Error::Config("total sample weight is zero".into()));
            }
            self.root_mass = mass;
        }
        let impurity = if mass > 0.0 {
            impurity_unchecked(&class_counts, mass, self.config.criterion)
        } else {
            0.0
        };
        let prediction = argmax_lowest(&class_counts) as u32;
        self.nodes.push(Node {
            depth,
            n_samples: rows.len(),
            impurity,
            class_counts,
            kind: NodeKind::Leaf { prediction },
        });
        Ok(self.nodes.len() - 1)
    }

    fn run(&mut self, rows: Vec<usize>) -> Result<()> {
        let root = self.new_node(&rows, 0)?;
        let mut pending: VecDeque<(usize, Vec<usize>)> = VecDeque::new();
        pending.push_back((root, rows));
        while let Some((idx, rows)) = match self.config.growth_order {
            GrowthOrder::BreadthFirst => pending.pop_front(),
            GrowthOrder::DepthFirst => pending.pop_back(),
        } {
            if let Some((left, right)) = self.expand(idx, rows)? {
                match self.config.growth_order {
                    GrowthOrder::BreadthFirst => {
                        pending.push_back(left);
                        pending.push_back(right);
                    }
                    // Push right first so the left child is expanded first,
                    // matching recursive CART order.
                    GrowthOrder::DepthFirst => {
                        pending.push_back(right);
                        pending.push_back(left);
                    }
                }
            }
        }
        Ok(())
    }

    fn expand(&mut self, idx: usize, rows: Vec<usize>) -> Result<ExpandOutcome> {
        let node = &self.nodes[idx];
        if let Some(max_depth) = self.config.max_depth {
            if node.depth >= max_depth {
                return Ok(None);
            }
        }
        if node.n_samples < self.config.min_samples_split {
            return Ok(None);
        }
        let populated = node.class_counts.iter().filter(|&&c| c > 0.0).count();
        if populated <= 1 {
            return Ok(None); // pure
        }

        let eligible = self.eligible_features(idx);
        if eligible.is_empty() {
            return Ok(None);
        }
        let candidates = self.subsample(eligible);

        let node_counts = self.nodes[idx].class_counts.clone();
        let node_impurity = self.nodes[idx].impurity;
        let node_mass: f64 = node_counts.iter().sum();
        let mut best: Option<BestSplit> = None;
        for f in candidates {
            self.scan_feature(
                f,
                &rows,
                &node_counts,
                node_impurity,
                node_mass,
                &mut best,
            );
        }
        let best = match best {
            Some(b) if b.score > 0.0 => b,
            _ => return Ok(None),
        };

        self.split_counts[best.feature] += 1;
        self.incremental_gain[best.feature] += best.gain * node_mass / self.root_mass;

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.data.value(r, best.feature) <= best.threshold);
        let depth = self.nodes[idx].depth + 1;
        let left = self.new_node(&left_rows, depth)?;
        let right = self.new_node(&right_rows, depth)?;
        self.nodes[idx].kind = NodeKind::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        Ok(Some(((left, left_rows), (right, right_rows))))
    }

    fn eligible_features(&self, node_idx: usize) -> Vec<usize> {
        let depth = self.nodes[node_idx].depth;
        (0..self.data.width())
            .filter(|&f| {
                if let Some(threshold) = self.sensitivity.level_threshold(f) {
                    let level = match self.config.level_semantics {
                        LevelSemantics::Depth => depth,
                        LevelSemantics::GrowthRank => node_idx as u32,
                    };
                    if level < threshold {
                        return false;
                    }
                }
                if let Some(budget) = self.sensitivity.split_budget(f) {
                    if self.split_counts[f] >= budget {
                        return false;
                    }
                }
                true
            })
            .collect()
    }

    fn subsample(&mut self, eligible: Vec<usize>) -> Vec<usize> {
        match self.config.feature_subsample {
            Some(k) if k < eligible.len() => {
                let mut picked: Vec<usize> = rand::seq::index::sample(&mut self.rng, eligible.len(), k)
                    .into_iter()
                    .map(|i| eligible[i])
                    .collect();
                picked.sort_unstable();
                picked
            }
            _ => eligible,
        }
    }

    /// Enumerates thresholds at midpoints between consecutive distinct values
    /// of `feature` and tracks the best-scoring split. Ties keep the first
    /// candidate, i.e. the lowest feature index, then the lowest threshold.
    fn scan_feature(
        &mut self,
        feature: usize,
        rows: &[usize],
        node_counts: &[f64],
        node_impurity: f64,
        node_mass: f64,
        best: &mut Option<BestSplit>,
    ) {
        let mut samples: Vec<(f64, u32, f64)> = rows
            .iter()
            .map(|&r| (self.data.value(r, feature), self.labels[r], self.weight_of(r)))
            .collect();
        samples.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN cells"));

        let w = self.sensitivity.weight(feature);
        let k = self.n_classes;
        let mut left = vec![0.0; k];
        let mut i = 0;
        while i < samples.len() {
            let value = samples[i].0;
            while i < samples.len() && samples[i].0 == value {
                left[samples[i].1 as usize] += samples[i].2;
                i += 1;
            }
            if i == samples.len() {
                break;
            }
            let threshold = (value + samples[i].0) / 2.0;
            let mut right = vec![0.0; k];
            for c in 0..k {
                right[c] = (node_counts[c] - left[c]).max(0.0);
            }
            let left_mass: f64 = left.iter().sum();
            let right_mass: f64 = right.iter().sum();
            let e_left = if left_mass > 0.0 {
                impurity_unchecked(&left, left_mass, self.config.criterion) * left_mass / node_mass
            } else {
                0.0
            };
            let e_right = if right_mass > 0.0 {
                impurity_unchecked(&right, right_mass, self.config.criterion) * right_mass
                    / node_mass
            } else {
                0.0
            };
            let gain = node_impurity - e_left - e_right;
            let score = node_impurity - (1.0 + w) * (e_left + e_right);
            let better = match best {
                Some(b) => score > b.score,
                None => true,
            };
            if better {
                *best = Some(BestSplit {
                    score,
                    gain,
                    feature,
                    threshold,
                });
            }
        }
    }
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_csv_reader, FeatureKind, HintFeature, SchemaHint};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn categorical_hint(columns: &[(&str, &[&str])], label: &str) -> SchemaHint {
        SchemaHint {
            label: Some(label.to_string()),
            features: columns
                .iter()
                .map(|(name, cats)| HintFeature {
                    name: name.to_string(),
                    kind: FeatureKind::Categorical,
                    categories: cats.iter().map(|c| c.to_string()).collect(),
                })
                .collect(),
        }
    }

    /// label == a exactly; b is noise.
    fn copy_dataset() -> Dataset {
        let csv = "a,b,y\n0,0,n\n0,1,n\n0,0,n\n0,1,n\n1,1,p\n1,0,p\n1,1,p\n1,0,p\n";
        let hint = categorical_hint(&[("a", &["0", "1"]), ("b", &["0", "1"])], "y");
        load_csv_reader(csv.as_bytes(), Some(&hint)).unwrap()
    }

    #[test]
    fn impurity_known_values() {
        assert_abs_diff_eq!(impurity(&[5.0, 5.0], SplitCriterion::Entropy).unwrap(), 1.0);
        assert_eq!(impurity(&[10.0, 0.0], SplitCriterion::Entropy).unwrap(), 0.0);
        assert_eq!(impurity(&[10.0, 0.0], SplitCriterion::Gini).unwrap(), 0.0);
        assert_abs_diff_eq!(impurity(&[3.0, 1.0], SplitCriterion::Gini).unwrap(), 0.375);
        assert!(matches!(
            impurity(&[0.0, 0.0], SplitCriterion::Entropy),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn split_score_classical_cases() {
        let sens = SensitivitySpec::none();
        let perfect = split_score(
            &[5.0, 5.0],
            &[5.0, 0.0],
            &[0.0, 5.0],
            0,
            &sens,
            SplitCriterion::Entropy,
        )
        .unwrap();
        assert_abs_diff_eq!(perfect, 1.0);
        let useless = split_score(
            &[4.0, 4.0],
            &[2.0, 2.0],
            &[2.0, 2.0],
            0,
            &sens,
            SplitCriterion::Entropy,
        )
        .unwrap();
        assert_abs_diff_eq!(useless, 0.0);
    }

    #[test]
    fn split_score_weight_penalty() {
        // Impure children: the penalty bites and the score drops with w.
        let parent = [6.0, 6.0];
        let left = [4.0, 2.0];
        let right = [2.0, 4.0];
        let base = split_score(&parent, &left, &right, 0, &SensitivitySpec::none(), SplitCriterion::Entropy).unwrap();
        let heavy = SensitivitySpec::none().with_weight(0, 1.0).unwrap();
        let penalized =
            split_score(&parent, &left, &right, 0, &heavy, SplitCriterion::Entropy).unwrap();
        assert!(penalized < base);
        // Pure children carry no post-split impurity, so there is nothing to
        // penalize and the weight has no effect.
        let pure =
            split_score(&[5.0, 5.0], &[5.0, 0.0], &[0.0, 5.0], 0, &heavy, SplitCriterion::Entropy)
                .unwrap();
        assert_abs_diff_eq!(pure, 1.0);
    }

    proptest! {
        #[test]
        fn split_score_decreasing_in_weight(
            l0 in 1u32..20, l1 in 1u32..20, r0 in 1u32..20, r1 in 1u32..20,
            wa in 0.0f64..1.0, delta in 0.01f64..0.5,
        ) {
            // Both children impure by construction.
            let left = [l0 as f64, l1 as f64];
            let right = [r0 as f64, r1 as f64];
            let parent = [left[0] + right[0], left[1] + right[1]];
            let wb = (wa + delta).min(1.0);
            prop_assume!(wb > wa);
            let sa = split_score(&parent, &left, &right, 0,
                &SensitivitySpec::none().with_weight(0, wa).unwrap(), SplitCriterion::Entropy).unwrap();
            let sb = split_score(&parent, &left, &right, 0,
                &SensitivitySpec::none().with_weight(0, wb).unwrap(), SplitCriterion::Entropy).unwrap();
            prop_assert!(sb < sa);
        }
    }

    #[test]
    fn trains_separable_data_to_depth_one() {
        let ds = copy_dataset();
        let tree = train(&ds, &SensitivitySpec::none(), &TreeConfig::default()).unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.n_leaves(), 2);
        match tree.root().kind {
            NodeKind::Split { feature, .. } => assert_eq!(feature, 0),
            _ => panic!("root should split"),
        }
        assert_eq!(tree.accuracy(&ds).unwrap(), 1.0);
    }

    #[test]
    fn budget_zero_excludes_feature() {
        let ds = copy_dataset();
        let sens = SensitivitySpec::none().with_split_budget(0, 0);
        let cfg = TreeConfig {
            growth_order: GrowthOrder::BreadthFirst,
            ..TreeConfig::default()
        };
        let tree = train(&ds, &sens, &cfg).unwrap();
        for node in tree.nodes() {
            if let NodeKind::Split { feature, .. } = node.kind {
                assert_ne!(feature, 0);
            }
        }
        tree.audit().unwrap();
    }

    #[test]
    fn constraints_that_forbid_all_splits_yield_single_leaf() {
        let csv = "a,y\n0,n\n0,n\n1,p\n1,p\n";
        let hint = categorical_hint(&[("a", &["0", "1"])], "y");
        let ds = load_csv_reader(csv.as_bytes(), Some(&hint)).unwrap();
        let sens = SensitivitySpec::none().with_split_budget(0, 0);
        let cfg = TreeConfig {
            growth_order: GrowthOrder::BreadthFirst,
            ..TreeConfig::default()
        };
        let tree = train(&ds, &sens, &cfg).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert!(tree.root().is_leaf());
        // Majority class with ties broken by lowest id.
        assert_eq!(tree.predict(&[0.0]).unwrap(), 0);
        assert!(!tree.importance().is_normalized());
        assert_eq!(tree.importance().sum(), 0.0);
    }

    #[test]
    fn level_threshold_pushes_feature_down() {
        // label == a; b is a noisy copy of a, so the root still has a
        // positive-gain split when a is ineligible there.
        let csv = "a,b,y\n0,0,n\n0,0,n\n0,0,n\n0,1,n\n1,1,p\n1,1,p\n1,1,p\n1,0,p\n";
        let hint = categorical_hint(&[("a", &["0", "1"]), ("b", &["0", "1"])], "y");
        let ds = load_csv_reader(csv.as_bytes(), Some(&hint)).unwrap();
        let sens = SensitivitySpec::none().with_level_threshold(0, 1);
        let tree = train(&ds, &sens, &TreeConfig::default()).unwrap();
        tree.audit().unwrap();
        if let NodeKind::Split { feature, .. } = tree.root().kind {
            assert_ne!(feature, 0, "sensitive feature must not split the root");
        }
        // It is still allowed (and useful) below the threshold.
        assert!(tree
            .nodes()
            .iter()
            .any(|n| matches!(n.kind, NodeKind::Split { feature: 0, .. })));
        assert_eq!(tree.accuracy(&ds).unwrap(), 1.0);
    }

    #[test]
    fn budget_requires_bfs() {
        let ds = copy_dataset();
        let sens = SensitivitySpec::none().with_split_budget(0, 1);
        let err = train(&ds, &sens, &TreeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn predict_and_leaf_path_basics() {
        let csv = "a,y\n0,n\n0,n\n0,n\n0,n\n0,n\n1,p\n1,p\n1,p\n";
        let hint = categorical_hint(&[("a", &["0", "1"])], "y");
        let ds = load_csv_reader(csv.as_bytes(), Some(&hint)).unwrap();
        let tree = train(&ds, &SensitivitySpec::none(), &TreeConfig::default()).unwrap();
        assert_eq!(tree.depth(), 1);
        let (leaf0, n0) = tree.leaf_path(&[0.0]).unwrap();
        let (leaf1, n1) = tree.leaf_path(&[1.0]).unwrap();
        assert_ne!(leaf0, leaf1);
        assert_eq!(n0, 5);
        assert_eq!(n1, 3);
        assert!(tree.predict(&[0.0, 0.0]).is_err()); // width mismatch
        assert!(tree.predict(&[f64::NAN]).is_err());
    }

    #[test]
    fn leaf_sample_counts_sum_to_n() {
        let ds = random_dataset(97, 4, 3, 11);
        let tree = train(&ds, &SensitivitySpec::none(), &TreeConfig::default()).unwrap();
        let total: usize = tree
            .nodes()
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.n_samples)
            .sum();
        assert_eq!(total, ds.n());
    }

    #[test]
    fn training_rows_reach_their_own_labels_when_purity_reachable() {
        // Threshold-sum labels over distinct rows: every impure node has a
        // positive-gain split, so greedy growth reaches purity.
        let ds = threshold_dataset(60, 5, 3, 3);
        let tree = train(&ds, &SensitivitySpec::none(), &TreeConfig::default()).unwrap();
        // Independent traversal check against predict().
        for i in 0..ds.n() {
            let row = ds.row(i);
            let mut idx = 0usize;
            loop {
                match tree.nodes()[idx].kind {
                    NodeKind::Leaf { prediction } => {
                        assert_eq!(tree.predict(row).unwrap(), prediction);
                        break;
                    }
                    NodeKind::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => idx = if row[feature] <= threshold { left } else { right },
                }
            }
        }
        assert_eq!(tree.accuracy(&ds).unwrap(), 1.0);
    }

    #[test]
    fn importance_perfect_split_is_one_hot() {
        let ds = copy_dataset();
        let tree = train(&ds, &SensitivitySpec::none(), &TreeConfig::default()).unwrap();
        let imp = tree.importance();
        assert!(imp.is_normalized());
        assert_abs_diff_eq!(imp.get(0), 1.0);
        assert_eq!(imp.get(1), 0.0);
    }

    #[test]
    fn incremental_importance_matches_posthoc() {
        for seed in 0..20u64 {
            let ds = random_dataset(80, 5, 3, seed);
            let tree = train(&ds, &SensitivitySpec::none(), &TreeConfig::default()).unwrap();
            let inc = tree.incremental_importance().unwrap();
            let post = tree.importance();
            assert_eq!(inc.is_normalized(), post.is_normalized());
            for f in 0..ds.width() {
                assert!((inc.get(f) - post.get(f)).abs() < 1e-12);
            }
            if post.is_normalized() {
                assert!((post.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = random_dataset(120, 6, 4, 42);
        let cfg = TreeConfig {
            feature_subsample: Some(3),
            seed: 9,
            ..TreeConfig::default()
        };
        let sens = SensitivitySpec::none().with_weight(2, 0.5).unwrap();
        let a = train(&ds, &sens, &cfg).unwrap();
        let b = train(&ds, &sens, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn tree_json_round_trips() {
        let ds = random_dataset(50, 4, 3, 5);
        let tree = train(&ds, &SensitivitySpec::none(), &TreeConfig::default()).unwrap();
        let json = serde_json::to_string(&tree).unwrap();
        let back: DecisionTree = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
        assert_eq!(back.incremental_importance(), None);
        for i in 0..ds.n() {
            assert_eq!(
                tree.predict(ds.row(i)).unwrap(),
                back.predict(ds.row(i)).unwrap()
            );
        }
        for f in 0..ds.width() {
            assert_eq!(tree.importance().get(f), back.importance().get(f));
        }
    }

    #[test]
    fn uniform_weights_match_unweighted_training() {
        let ds = random_dataset(70, 4, 3, 8);
        let rows: Vec<usize> = (0..ds.n()).collect();
        let weights = vec![1.0; ds.n()];
        let cfg = TreeConfig::default();
        let a = train(&ds, &SensitivitySpec::none(), &cfg).unwrap();
        let b = train_on(&ds, rows, Some(&weights), &SensitivitySpec::none(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn audit_random_constrained_trees() {
        for seed in 0..30u64 {
            let ds = random_dataset(90, 5, 3, seed);
            let sens = SensitivitySpec::none()
                .with_weight(0, 0.7)
                .unwrap()
                .with_level_threshold(1, 2)
                .with_split_budget(2, 1 + (seed % 3) as u32);
            let cfg = TreeConfig {
                growth_order: GrowthOrder::BreadthFirst,
                seed,
                ..TreeConfig::default()
            };
            let tree = train(&ds, &sens, &cfg).unwrap();
            tree.audit().unwrap();
        }
    }

    /// Small random dataset with distinct rows (integer grid features) and
    /// uniformly random labels.
    fn random_dataset(n: usize, width: usize, classes: usize, seed: u64) -> Dataset {
        distinct_rows_dataset(n, width, classes, seed, |_row, rng| {
            rng.random_range(0..classes as u32)
        })
    }

    /// Distinct rows labeled by bucketing the feature sum, which greedy
    /// positive-gain splitting can always separate.
    fn threshold_dataset(n: usize, width: usize, classes: usize, seed: u64) -> Dataset {
        let max_sum = (width * 5) as f64;
        distinct_rows_dataset(n, width, classes, seed, move |row, _rng| {
            let sum: u32 = row.iter().sum();
            let bucket = (sum as f64 / (max_sum + 1.0) * classes as f64) as u32;
            bucket.min(classes as u32 - 1)
        })
    }

    fn distinct_rows_dataset(
        n: usize,
        width: usize,
        classes: usize,
        seed: u64,
        mut label_of: impl FnMut(&[u32], &mut ChaCha8Rng) -> u32,
    ) -> Dataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut csv = String::new();
        for f in 0..width {
            csv.push_str(&format!("f{f},"));
        }
        csv.push_str("y\n");
        let mut seen = std::collections::HashSet::new();
        let mut count = 0;
        while count < n {
            let row: Vec<u32> = (0..width).map(|_| rng.random_range(0..6u32)).collect();
            if !seen.insert(row.clone()) {
                continue;
            }
            for v in &row {
                csv.push_str(&format!("{v},"));
            }
            csv.push_str(&format!("c{}\n", label_of(&row, &mut rng)));
            count += 1;
        }
        let hint = SchemaHint {
            label: Some("y".into()),
            features: (0..width)
                .map(|f| HintFeature {
                    name: format!("f{f}"),
                    kind: FeatureKind::Numeric,
                    categories: vec![],
                })
                .collect(),
        };
        load_csv_reader(csv.as_bytes(), Some(&hint)).unwrap()
    }
}
