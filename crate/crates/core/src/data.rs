//! Tabular dataset ingestion and preprocessing.
//!
//! CSV columns are either numeric or categorical; categorical values are
//! ordinal-encoded by the position of the category string in the feature's
//! category list (lexicographic order when inferred from data, file order when
//! a schema hint is given). Missing cells (empty strings) encode as `NaN` for
//! features and `None` for labels; they survive ingestion so the preprocessing
//! recipes can drop the affected rows, but any model training on incomplete
//! data is an error.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical,
    Numeric,
}

/// Description of one column: name, kind and (for categoricals) the ordered
/// category vocabulary that defines the ordinal encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    pub index: usize,
}

impl FeatureMeta {
    pub fn categorical(name: impl Into<String>, index: usize, categories: Vec<String>) -> Self {
        FeatureMeta {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories,
            index,
        }
    }

    pub fn numeric(name: impl Into<String>, index: usize) -> Self {
        FeatureMeta {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: Vec::new(),
            index,
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::Categorical
    }

    /// Number of categories, for categorical features.
    pub fn arity(&self) -> Option<usize> {
        match self.kind {
            FeatureKind::Categorical => Some(self.categories.len()),
            FeatureKind::Numeric => None,
        }
    }

    /// Ordinal code for a raw string value.
    pub fn encode(&self, raw: &str) -> Option<f64> {
        match self.kind {
            FeatureKind::Categorical => self
                .categories
                .iter()
                .position(|c| c == raw)
                .map(|i| i as f64),
            FeatureKind::Numeric => raw.parse::<f64>().ok(),
        }
    }

    /// Category string for an encoded value (categorical features only).
    pub fn decode(&self, value: f64) -> Option<&str> {
        if self.kind != FeatureKind::Categorical {
            return None;
        }
        if !value.is_finite() || value.fract() != 0.0 || value < 0.0 {
            return None;
        }
        self.categories.get(value as usize).map(|s| s.as_str())
    }

    fn validate(&self) -> Result<()> {
        if self.kind == FeatureKind::Categorical {
            if self.categories.is_empty() {
                return Err(Error::Config(format!(
                    "categorical feature `{}` has no categories",
                    self.name
                )));
            }
            let unique: BTreeSet<&String> = self.categories.iter().collect();
            if unique.len() != self.categories.len() {
                return Err(Error::Config(format!(
                    "categorical feature `{}` has duplicate categories",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic train/test partition parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            train_fraction,
            seed,
        }
    }
}

/// Schema hint file contents: which column is the label, and fixed
/// kind/category-order for any subset of the columns. Stored as TOML:
///
/// ```toml
/// label = "class"
///
/// [[features]]
/// name = "parents"
/// kind = "categorical"
/// categories = ["usual", "pretentious", "great_pret"]
///
/// [[features]]
/// name = "age"
/// kind = "numeric"
/// ```
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SchemaHint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub features: Vec<HintFeature>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HintFeature {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl SchemaHint {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema hint serializes")
    }

    fn feature(&self, name: &str) -> Option<&HintFeature> {
        self.features.iter().find(|f| f.name == name)
    }
}

/// Encoded tabular samples plus the metadata needed to decode them.
///
/// Feature cells are stored row-major as `f64`; `NaN` marks a missing cell.
/// Labels are per-row class ids, `None` when the raw label cell was missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<FeatureMeta>,
    label: FeatureMeta,
    cells: Vec<f64>,
    labels: Vec<Option<u32>>,
}

impl Dataset {
    pub fn from_parts(
        schema: Vec<FeatureMeta>,
        label: FeatureMeta,
        cells: Vec<f64>,
        labels: Vec<Option<u32>>,
    ) -> Result<Self> {
        let width = schema.len();
        if width == 0 {
            return Err(Error::Config("schema has no features".into()));
        }
        for (i, meta) in schema.iter().enumerate() {
            meta.validate()?;
            if meta.index != i {
                return Err(Error::Config(format!(
                    "feature `{}` has index {}, expected {}",
                    meta.name, meta.index, i
                )));
            }
        }
        let mut names: BTreeSet<&str> = BTreeSet::new();
        for meta in schema.iter().chain(std::iter::once(&label)) {
            if !names.insert(meta.name.as_str()) {
                return Err(Error::Config(format!("duplicate column name `{}`", meta.name)));
            }
        }
        if !label.is_categorical() {
            return Err(Error::Config("label column must be categorical".into()));
        }
        label.validate()?;
        if cells.len() != labels.len() * width {
            return Err(Error::Config(format!(
                "cell matrix has {} values for {} rows of width {}",
                cells.len(),
                labels.len(),
                width
            )));
        }
        let ds = Dataset {
            schema,
            label,
            cells,
            labels,
        };
        for i in 0..ds.n() {
            for meta in &ds.schema {
                let v = ds.value(i, meta.index);
                if v.is_nan() {
                    continue;
                }
                if meta.is_categorical() && meta.decode(v).is_none() {
                    return Err(Error::Config(format!(
                        "row {} has out-of-range code {} for feature `{}`",
                        i, v, meta.name
                    )));
                }
            }
            if let Some(id) = ds.labels[i] {
                if id as usize >= ds.label.categories.len() {
                    return Err(Error::Config(format!(
                        "row {} has out-of-range label id {}",
                        i, id
                    )));
                }
            }
        }
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[FeatureMeta] {
        &self.schema
    }

    pub fn label_meta(&self) -> &FeatureMeta {
        &self.label
    }

    pub fn n_classes(&self) -> usize {
        self.label.categories.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.cells[i * w..(i + 1) * w]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.cells[row * self.width() + feature]
    }

    pub fn label_id(&self, row: usize) -> Option<u32> {
        self.labels[row]
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::Config(format!("unknown feature `{name}`")))
    }

    /// Errors if any used cell or label is missing; trainers call this first.
    pub fn ensure_complete(&self) -> Result<()> {
        for (i, label) in self.labels.iter().enumerate() {
            if label.is_none() {
                return Err(Error::MissingData(format!("row {i} has no label")));
            }
            if self.row(i).iter().any(|v| v.is_nan()) {
                return Err(Error::MissingData(format!("row {i} has a missing cell")));
            }
        }
        Ok(())
    }

    /// Class ids for all rows; errors if any label is missing.
    pub fn dense_labels(&self) -> Result<Vec<u32>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::MissingData(format!("row {i} has no label"))))
            .collect()
    }

    fn subset(&self, rows: &[usize]) -> Dataset {
        let w = self.width();
        let mut cells = Vec::with_capacity(rows.len() * w);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            cells.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            schema: self.schema.clone(),
            label: self.label.clone(),
            cells,
            labels,
        }
    }

    /// Schema hint equivalent to this dataset's metadata (used when writing a
    /// prepared dataset back to disk).
    pub fn schema_hint(&self) -> SchemaHint {
        let mut features: Vec<HintFeature> = self
            .schema
            .iter()
            .map(|f| HintFeature {
                name: f.name.clone(),
                kind: f.kind,
                categories: f.categories.clone(),
            })
            .collect();
        features.push(HintFeature {
            name: self.label.name.clone(),
            kind: FeatureKind::Categorical,
            categories: self.label.categories.clone(),
        });
        SchemaHint {
            label: Some(self.label.name.clone()),
            features,
        }
    }

    /// Writes the dataset as RFC-4180 CSV with a header row, decoding
    /// categorical codes back to their category strings.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.schema.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.label.name);
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut record: Vec<String> = Vec::with_capacity(self.width() + 1);
            for meta in &self.schema {
                let v = self.value(i, meta.index);
                record.push(if v.is_nan() {
                    String::new()
                } else if meta.is_categorical() {
                    meta.decode(v)
                        .unwrap_or_else(|| panic!("invalid code {} for `{}`", v, meta.name))
                        .to_string()
                } else {
                    format!("{v}")
                });
            }
            record.push(match self.labels[i] {
                Some(id) => self.label.categories[id as usize].clone(),
                None => String::new(),
            });
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Loads a CSV file with header row, inferring column kinds and categorical
/// vocabularies unless a schema hint fixes them.
///
/// Without a hint the label is the last column; a column is numeric when every
/// non-missing value parses as a number, otherwise categorical with
/// lexicographically ordered categories. Empty cells are missing values.
pub fn load_csv(path: impl AsRef<Path>, hint: Option<&SchemaHint>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, hint)
}

pub fn load_csv_reader<R: Read>(reader: R, hint: Option<&SchemaHint>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "empty header row".into(),
        });
    }

    let mut records: Vec<csv::StringRecord> = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(map_csv_row_error)?;
        records.push(record);
    }

    // Locate the label column.
    let label_col = match hint.and_then(|h| h.label.as_deref()) {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("label column `{name}` not in header")))?,
        None => headers.len() - 1,
    };

    // Resolve per-column metadata: hinted columns keep the hinted kind and
    // category order, the rest are inferred from the data.
    let mut metas: Vec<FeatureMeta> = Vec::with_capacity(headers.len());
    if let Some(h) = hint {
        for f in &h.features {
            if !headers.iter().any(|name| *name == f.name) {
                return Err(Error::Config(format!(
                    "hinted feature `{}` not in CSV header",
                    f.name
                )));
            }
        }
    }
    for (col, name) in headers.iter().enumerate() {
        let hinted = hint.and_then(|h| h.feature(name));
        let meta = match hinted {
            Some(f) => {
                let meta = FeatureMeta {
                    name: name.clone(),
                    kind: f.kind,
                    categories: f.categories.clone(),
                    index: col,
                };
                meta.validate()?;
                meta
            }
            None => infer_column(name, col, &records, col == label_col)?,
        };
        metas.push(meta);
    }
    if !metas[label_col].is_categorical() {
        return Err(Error::Config(format!(
            "label column `{}` must be categorical",
            headers[label_col]
        )));
    }

    // Encode. Feature columns keep their CSV order (minus the label column).
    let mut schema: Vec<FeatureMeta> = Vec::with_capacity(headers.len() - 1);
    for meta in metas.iter().filter(|m| m.index != label_col) {
        let mut m = meta.clone();
        m.index = schema.len();
        schema.push(m);
    }
    let mut label = metas[label_col].clone();
    label.index = schema.len();

    let width = schema.len();
    let mut cells = Vec::with_capacity(records.len() * width);
    let mut labels = Vec::with_capacity(records.len());
    for (row_idx, record) in records.iter().enumerate() {
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(row_idx as u64 + 2);
        for (col, meta) in metas.iter().enumerate() {
            let raw = record.get(col).unwrap_or("").trim();
            if col == label_col {
                if raw.is_empty() {
                    labels.push(None);
                } else {
                    match meta.encode(raw) {
                        Some(v) => labels.push(Some(v as u32)),
                        None => {
                            return Err(Error::Encoding {
                                feature: meta.name.clone(),
                                value: raw.to_string(),
                            })
                        }
                    }
                }
            } else if raw.is_empty() {
                cells.push(f64::NAN);
            } else {
                match meta.encode(raw) {
                    Some(v) => cells.push(v),
                    None => {
                        return Err(if meta.is_categorical() {
                            Error::Encoding {
                                feature: meta.name.clone(),
                                value: raw.to_string(),
                            }
                        } else {
                            Error::Parse {
                                line,
                                message: format!(
                                    "value `{}` in numeric column `{}` is not a number",
                                    raw, meta.name
                                ),
                            }
                        })
                    }
                }
            }
        }
    }

    Dataset::from_parts(schema, label, cells, labels)
}

fn map_csv_row_error(err: csv::Error) -> Error {
    if let csv::ErrorKind::UnequalLengths { pos, expected_len, len } = err.kind() {
        let line = pos.as_ref().map(|p| p.line()).unwrap_or(0);
        return Error::Parse {
            line,
            message: format!("expected {expected_len} columns, found {len}"),
        };
    }
    Error::Csv(err)
}

fn infer_column(
    name: &str,
    col: usize,
    records: &[csv::StringRecord],
    is_label: bool,
) -> Result<FeatureMeta> {
    let mut all_numeric = true;
    let mut seen = BTreeSet::new();
    let mut any_value = false;
    for record in records {
        let raw = record.get(col).unwrap_or("").trim();
        if raw.is_empty() {
            continue;
        }
        any_value = true;
        if raw.parse::<f64>().is_err() {
            all_numeric = false;
        }
        seen.insert(raw.to_string());
    }
    if !any_value {
        return Err(Error::MissingData(format!(
            "column `{name}` has no values to infer a kind from"
        )));
    }
    // Labels are class ids even when they look numeric.
    if all_numeric && !is_label {
        Ok(FeatureMeta::numeric(name, col))
    } else {
        Ok(FeatureMeta::categorical(
            name,
            col,
            seen.into_iter().collect(),
        ))
    }
}

/// Drops rows with a missing label, then drops rows whose label class
/// frequency (among labeled rows) is below `min_class_fraction`, and
/// re-encodes the surviving classes densely.
pub fn filter_label(ds: &Dataset, min_class_fraction: f64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&min_class_fraction) {
        return Err(Error::Config(format!(
            "min_class_fraction must be in [0,1), got {min_class_fraction}"
        )));
    }
    let labeled: Vec<usize> = (0..ds.n()).filter(|&i| ds.labels[i].is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::EmptyDataset("no labeled rows".into()));
    }
    let mut counts = vec![0usize; ds.n_classes()];
    for &i in &labeled {
        counts[ds.labels[i].unwrap() as usize] += 1;
    }
    let total = labeled.len() as f64;
    let keep_class: Vec<bool> = counts
        .iter()
        .map(|&c| c as f64 / total >= min_class_fraction && c > 0)
        .collect();

    let mut remap = vec![None; ds.n_classes()];
    let mut surviving = Vec::new();
    for (old, keep) in keep_class.iter().enumerate() {
        if *keep {
            remap[old] = Some(surviving.len() as u32);
            surviving.push(ds.label.categories[old].clone());
        }
    }
    if surviving.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "every label class is below frequency {min_class_fraction}"
        )));
    }

    let rows: Vec<usize> = labeled
        .into_iter()
        .filter(|&i| remap[ds.labels[i].unwrap() as usize].is_some())
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyDataset("label filtering removed every row".into()));
    }

    let mut out = ds.subset(&rows);
    out.label = FeatureMeta {
        name: ds.label.name.clone(),
        kind: FeatureKind::Categorical,
        categories: surviving,
        index: ds.label.index,
    };
    for l in out.labels.iter_mut() {
        *l = Some(remap[l.unwrap() as usize].unwrap());
    }
    Ok(out)
}

/// Rewrites a categorical feature as boolean: 1 when the original category is
/// in `positive_categories`, else 0. Rows missing the feature's value are
/// dropped.
pub fn booleanize_feature(
    ds: &Dataset,
    feature: &str,
    positive_categories: &BTreeSet<String>,
) -> Result<Dataset> {
    let idx = ds.feature_index(feature)?;
    let meta = &ds.schema[idx];
    if !meta.is_categorical() {
        return Err(Error::Config(format!(
            "feature `{feature}` is numeric, cannot booleanize"
        )));
    }
    for cat in positive_categories {
        if !meta.categories.contains(cat) {
            return Err(Error::Config(format!(
                "feature `{feature}` has no category `{cat}`"
            )));
        }
    }
    let positive: Vec<bool> = meta
        .categories
        .iter()
        .map(|c| positive_categories.contains(c))
        .collect();

    let rows: Vec<usize> = (0..ds.n())
        .filter(|&i| !ds.value(i, idx).is_nan())
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "every row is missing feature `{feature}`"
        )));
    }
    let mut out = ds.subset(&rows);
    let w = out.width();
    for i in 0..out.n() {
        let old = out.cells[i * w + idx] as usize;
        out.cells[i * w + idx] = if positive[old] { 1.0 } else { 0.0 };
    }
    out.schema[idx] = FeatureMeta::categorical(
        meta.name.clone(),
        idx,
        vec!["0".to_string(), "1".to_string()],
    );
    Ok(out)
}

/// Seed-deterministic shuffle-and-partition. Both partitions share the
/// schema; together they contain exactly the input rows.
pub fn train_test_split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot split an empty dataset".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0,1), got {}",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..ds.n()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let train_n = (ds.n() as f64 * spec.train_fraction).round() as usize;
    if train_n == 0 || train_n == ds.n() {
        return Err(Error::Split(format!(
            "fraction {} of {} rows leaves an empty partition",
            spec.train_fraction,
            ds.n()
        )));
    }
    let train = ds.subset(&order[..train_n]);
    let test = ds.subset(&order[train_n..]);
    Ok((train, test))
}

/// Empirical distribution of a categorical feature's values, over rows where
/// the value is present. Entries follow category order and sum to 1.
pub fn prior(ds: &Dataset, feature: &str) -> Result<Vec<f64>> {
    let idx = ds.feature_index(feature)?;
    let meta = &ds.schema[idx];
    let arity = meta.arity().ok_or_else(|| {
        Error::Config(format!("feature `{feature}` is numeric, prior undefined"))
    })?;
    let mut counts = vec![0usize; arity];
    let mut total = 0usize;
    for i in 0..ds.n() {
        let v = ds.value(i, idx);
        if v.is_nan() {
            continue;
        }
        counts[v as usize] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::Domain(format!(
            "feature `{feature}` has no observed values"
        )));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}
