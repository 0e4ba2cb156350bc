//! Built-in dataset generators.
//!
//! `nursery_like` reproduces the shape of the classic nursery-school
//! admission data: the full factorial enumeration of eight categorical
//! attributes (12,960 rows) labeled by a deterministic hierarchical scoring
//! rule, with the same attribute names, category vocabularies, exact
//! `health = not_recom` short-circuit and a two-row ultra-rare class. It is a
//! stand-in for environments where the public CSV is unavailable; the
//! experiment pipeline accepts either interchangeably.
//!
//! `gss_like` draws survey-style rows where one boolean-izable `happiness`
//! feature is correlated with the label and with several other features
//! through a latent wellbeing variable, so attribute-inference experiments
//! have real signal to work with.
//!
//! `random_classification` produces small integer-grid datasets with a
//! structured-plus-noise label, used for randomized audits and oracle checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, FeatureMeta};
use crate::error::Result;

const NURSERY_PARENTS: [&str; 3] = ["usual", "pretentious", "great_pret"];
const NURSERY_HAS_NURS: [&str; 5] = ["proper", "less_proper", "improper", "critical", "very_crit"];
const NURSERY_FORM: [&str; 4] = ["complete", "completed", "incomplete", "foster"];
const NURSERY_CHILDREN: [&str; 4] = ["1", "2", "3", "more"];
const NURSERY_HOUSING: [&str; 3] = ["convenient", "less_conv", "critical"];
const NURSERY_FINANCE: [&str; 2] = ["convenient", "inconv"];
const NURSERY_SOCIAL: [&str; 3] = ["nonprob", "slightly_prob", "problematic"];
const NURSERY_HEALTH: [&str; 3] = ["recommended", "priority", "not_recom"];
const NURSERY_CLASSES: [&str; 5] = ["not_recom", "recommend", "very_recom", "priority", "spec_prior"];

// Per-value badness scores, indexed in the semantic orders above.
const SCORE_PARENTS: [u32; 3] = [0, 1, 2];
const SCORE_HAS_NURS: [u32; 5] = [0, 1, 2, 3, 4];
const SCORE_FORM: [u32; 4] = [0, 1, 2, 3];
const SCORE_CHILDREN: [u32; 4] = [0, 1, 2, 2];
const SCORE_HOUSING: [u32; 3] = [0, 1, 2];
const SCORE_FINANCE: [u32; 2] = [0, 1];
const SCORE_SOCIAL: [u32; 3] = [0, 0, 1];
const SCORE_HEALTH: [u32; 2] = [0, 1]; // recommended, priority

fn categorical_meta(name: &str, index: usize, values: &[&str]) -> FeatureMeta {
    let mut categories: Vec<String> = values.iter().map(|s| s.to_string()).collect();
    categories.sort();
    FeatureMeta::categorical(name, index, categories)
}

/// Complete factorial enumeration of the nursery attribute space with a
/// deterministic hierarchical label. Always returns the same 12,960 rows.
pub fn nursery_like() -> Dataset {
    let schema = vec![
        categorical_meta("parents", 0, &NURSERY_PARENTS),
        categorical_meta("has_nurs", 1, &NURSERY_HAS_NURS),
        categorical_meta("form", 2, &NURSERY_FORM),
        categorical_meta("children", 3, &NURSERY_CHILDREN),
        categorical_meta("housing", 4, &NURSERY_HOUSING),
        categorical_meta("finance", 5, &NURSERY_FINANCE),
        categorical_meta("social", 6, &NURSERY_SOCIAL),
        categorical_meta("health", 7, &NURSERY_HEALTH),
    ];
    let label = categorical_meta("class", schema.len(), &NURSERY_CLASSES);

    let encode = |meta: &FeatureMeta, value: &str| meta.encode(value).expect("known category");

    let mut cells = Vec::with_capacity(12_960 * schema.len());
    let mut labels = Vec::with_capacity(12_960);
    for parents in 0..NURSERY_PARENTS.len() {
        for has_nurs in 0..NURSERY_HAS_NURS.len() {
            for form in 0..NURSERY_FORM.len() {
                for children in 0..NURSERY_CHILDREN.len() {
                    for housing in 0..NURSERY_HOUSING.len() {
                        for finance in 0..NURSERY_FINANCE.len() {
                            for social in 0..NURSERY_SOCIAL.len() {
                                for health in 0..NURSERY_HEALTH.len() {
                                    cells.push(encode(&schema[0], NURSERY_PARENTS[parents]));
                                    cells.push(encode(&schema[1], NURSERY_HAS_NURS[has_nurs]));
                                    cells.push(encode(&schema[2], NURSERY_FORM[form]));
                                    cells.push(encode(&schema[3], NURSERY_CHILDREN[children]));
                                    cells.push(encode(&schema[4], NURSERY_HOUSING[housing]));
                                    cells.push(encode(&schema[5], NURSERY_FINANCE[finance]));
                                    cells.push(encode(&schema[6], NURSERY_SOCIAL[social]));
                                    cells.push(encode(&schema[7], NURSERY_HEALTH[health]));
                                    let class = nursery_class(
                                        parents, has_nurs, form, children, housing, finance,
                                        social, health,
                                    );
                                    labels.push(Some(
                                        label.encode(class).expect("known class") as u32
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Dataset::from_parts(schema, label, cells, labels).expect("generator invariants hold")
}

#[allow(clippy::too_many_arguments)]
fn nursery_class(
    parents: usize,
    has_nurs: usize,
    form: usize,
    children: usize,
    housing: usize,
    finance: usize,
    social: usize,
    health: usize,
) -> &'static str {
    // health == not_recom overrides everything.
    if health == 2 {
        return "not_recom";
    }
    let pen = SCORE_PARENTS[parents]
        + SCORE_HAS_NURS[has_nurs]
        + SCORE_FORM[form]
        + SCORE_CHILDREN[children]
        + SCORE_HOUSING[housing]
        + SCORE_FINANCE[finance]
        + SCORE_SOCIAL[social]
        + SCORE_HEALTH[health];
    let recommended = health == 0;
    if pen == 0 {
        "recommend"
    } else if pen <= 3 || (pen == 4 && recommended && social == 0) {
        "very_recom"
    } else if pen <= 7 || (pen == 8 && !(health == 1 && social == 2)) {
        "priority"
    } else {
        "spec_prior"
    }
}

const GSS_HAPPINESS: [&str; 3] = ["not_too_happy", "pretty_happy", "very_happy"];
const GSS_LABEL: [&str; 3] = ["not_too_happy", "pretty_happy", "very_happy"];

/// Survey-style rows: a latent wellbeing variable drives the `happiness`
/// feature, the label and (with smaller loadings) several other features,
/// leaving plenty of irreducible noise. `happiness` booleanized on
/// `very_happy` has a prior close to [0.6, 0.4].
pub fn gss_like(n: usize, seed: u64) -> Result<Dataset> {
    let mut schema = vec![categorical_meta("happiness", 0, &GSS_HAPPINESS)];
    let numeric = [
        "age", "educ", "income", "health", "satfin", "children", "attend", "prestige",
        "hours_tv", "socialize", "region", "sex", "race", "urban", "owngun", "news",
    ];
    for (i, name) in numeric.iter().enumerate() {
        schema.push(FeatureMeta::numeric(*name, i + 1));
    }
    let label = categorical_meta("marital_happiness", schema.len(), &GSS_LABEL);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = Normal::new();
    let width = schema.len();
    let mut cells = Vec::with_capacity(n * width);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u = normal.sample(&mut rng);
        let hscore = 0.8 * u + 0.6 * normal.sample(&mut rng);
        // Upper 40% of the score is `very_happy`, lower 15% `not_too_happy`.
        let (happy_cat, happy01) = if hscore > 0.253347 {
            ("very_happy", 1.0)
        } else if hscore < -1.036433 {
            ("not_too_happy", 0.0)
        } else {
            ("pretty_happy", 0.0)
        };
        cells.push(schema[0].encode(happy_cat).expect("known category"));

        let mut mix = |load: f64, rng: &mut ChaCha8Rng| -> f64 {
            load * u + (1.0 - load * load).sqrt() * normal.sample(rng)
        };
        let age = 18.0 + bucket(mix(0.25, &mut rng), 72) as f64;
        let educ = bucket(mix(0.35, &mut rng), 21) as f64;
        let income = bucket(mix(0.50, &mut rng), 11) as f64;
        let health = bucket(mix(0.55, &mut rng), 4) as f64;
        let satfin = bucket(mix(0.50, &mut rng), 3) as f64;
        let children = bucket(mix(-0.20, &mut rng), 7) as f64;
        let attend = bucket(mix(0.15, &mut rng), 9) as f64;
        let prestige = bucket(mix(0.35, &mut rng), 40) as f64;
        let hours_tv = bucket(mix(-0.25, &mut rng), 13) as f64;
        let socialize = bucket(mix(0.30, &mut rng), 3) as f64;
        for v in [age, educ, income, health, satfin, children, attend, prestige, hours_tv, socialize] {
            cells.push(v);
        }
        for arity in [4usize, 2, 3, 2, 2, 5] {
            cells.push(bucket(normal.sample(&mut rng), arity) as f64);
        }

        let score = 1.25 * happy01 + 0.75 * u + 0.08 * income + 0.9 * normal.sample(&mut rng);
        let class = if score > 1.75 {
            "very_happy"
        } else if score < -0.6 {
            "not_too_happy"
        } else {
            "pretty_happy"
        };
        labels.push(Some(label.encode(class).expect("known class") as u32));
    }
    Dataset::from_parts(schema, label, cells, labels)
}

/// Maps a standard-normal value to one of `k` ordinal buckets.
fn bucket(z: f64, k: usize) -> usize {
    let t = ((z + 3.0) / 6.0 * k as f64).floor();
    (t.max(0.0) as usize).min(k - 1)
}

/// Box-Muller standard normal sampler.
struct Normal {
    spare: Option<f64>,
}

impl Normal {
    fn new() -> Self {
        Normal { spare: None }
    }

    fn sample(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Parameters for [`random_classification`].
#[derive(Debug, Clone)]
pub struct RandomSpec {
    pub n: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Values per feature (integer grid 0..arity).
    pub arity: usize,
    /// Probability that a row's label is drawn uniformly instead of from the
    /// structured rule.
    pub label_noise: f64,
    /// Force feature 0 to be a boolean categorical (values 0/1).
    pub first_feature_binary: bool,
    pub seed: u64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            n: 100,
            n_features: 5,
            n_classes: 3,
            arity: 5,
            label_noise: 0.15,
            first_feature_binary: false,
            seed: 0,
        }
    }
}

/// Random integer-grid dataset whose label mixes a deterministic rule over
/// the features with uniform noise.
pub fn random_classification(spec: &RandomSpec) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut schema = Vec::with_capacity(spec.n_features);
    for f in 0..spec.n_features {
        if f == 0 && spec.first_feature_binary {
            schema.push(categorical_meta("s", 0, &["0", "1"]));
        } else {
            schema.push(FeatureMeta::numeric(format!("f{f}"), f));
        }
    }
    let class_names: Vec<String> = (0..spec.n_classes).map(|c| format!("c{c}")).collect();
    let label = FeatureMeta::categorical("y", spec.n_features, class_names);

    let mut cells = Vec::with_capacity(spec.n * spec.n_features);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut rule = 0usize;
        for f in 0..spec.n_features {
            let arity = if f == 0 && spec.first_feature_binary {
                2
            } else {
                spec.arity
            };
            let v = rng.random_range(0..arity);
            rule += (f + 1) * v;
            cells.push(v as f64);
        }
        let class = if rng.random::<f64>() < spec.label_noise {
            rng.random_range(0..spec.n_classes)
        } else {
            rule % spec.n_classes
        };
        labels.push(Some(class as u32));
    }
    Dataset::from_parts(schema, label, cells, labels)
}

/// Binary dataset whose label is exactly the first (sensitive) feature; the
/// remaining features are uniform noise. The sensitive feature is 1 with
/// probability 0.35, so the prior has a strict majority value.
pub fn label_equals_feature(n: usize, noise_features: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schema = vec![categorical_meta("s", 0, &["0", "1"])];
    for f in 0..noise_features {
        schema.push(FeatureMeta::numeric(format!("f{f}"), f + 1));
    }
    let label = FeatureMeta::categorical(
        "y",
        schema.len(),
        vec!["c0".to_string(), "c1".to_string()],
    );
    let mut cells = Vec::with_capacity(n * schema.len());
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let s = if rng.random::<f64>() < 0.35 { 1u32 } else { 0 };
        cells.push(s as f64);
        for _ in 0..noise_features {
            cells.push(rng.random_range(0..6) as f64);
        }
        labels.push(Some(s));
    }
    Dataset::from_parts(schema, label, cells, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{booleanize_feature, filter_label, prior};
    use std::collections::BTreeSet;

    #[test]
    fn nursery_like_shape_and_distribution() {
        let ds = nursery_like();
        assert_eq!(ds.n(), 12_960);
        assert_eq!(ds.width(), 8);
        let mut counts = vec![0usize; ds.n_classes()];
        for i in 0..ds.n() {
            counts[ds.label_id(i).unwrap() as usize] += 1;
        }
        // Lexicographic class order: not_recom, priority, recommend,
        // spec_prior, very_recom.
        assert_eq!(
            ds.label_meta().categories,
            vec!["not_recom", "priority", "recommend", "spec_prior", "very_recom"]
        );
        assert_eq!(counts, vec![4320, 4321, 2, 3968, 349]);
    }

    #[test]
    fn nursery_like_is_deterministic() {
        assert_eq!(nursery_like(), nursery_like());
    }

    #[test]
    fn nursery_like_preprocessing_matches_expected_sizes() {
        let ds = nursery_like();
        let filtered = filter_label(&ds, 0.01).unwrap();
        assert_eq!(filtered.n(), 12_958);
        assert_eq!(filtered.n_classes(), 4);
        let boolean = booleanize_feature(
            &filtered,
            "social",
            &BTreeSet::from(["problematic".to_string()]),
        )
        .unwrap();
        let p = prior(&boolean, "social").unwrap();
        assert!((p[0] - 0.66).abs() < 0.01, "prior {p:?}");
        assert!((p[1] - 0.34).abs() < 0.01, "prior {p:?}");
    }

    #[test]
    fn gss_like_shape_and_prior() {
        let ds = gss_like(20_000, 3).unwrap();
        assert_eq!(ds.n(), 20_000);
        assert_eq!(ds.width(), 17);
        ds.ensure_complete().unwrap();
        let boolean = booleanize_feature(
            &ds,
            "happiness",
            &BTreeSet::from(["very_happy".to_string()]),
        )
        .unwrap();
        let p = prior(&boolean, "happiness").unwrap();
        assert!((p[0] - 0.6).abs() < 0.02, "prior {p:?}");
        assert_eq!(gss_like(500, 9).unwrap(), gss_like(500, 9).unwrap());
        assert_ne!(gss_like(500, 9).unwrap(), gss_like(500, 10).unwrap());
    }

    #[test]
    fn random_classification_respects_spec() {
        let spec = RandomSpec {
            n: 60,
            n_features: 4,
            first_feature_binary: true,
            seed: 5,
            ..RandomSpec::default()
        };
        let ds = random_classification(&spec).unwrap();
        assert_eq!(ds.n(), 60);
        assert_eq!(ds.width(), 4);
        assert_eq!(ds.schema()[0].arity(), Some(2));
        ds.ensure_complete().unwrap();
    }

    #[test]
    fn label_equals_feature_is_exact() {
        let ds = label_equals_feature(200, 3, 1).unwrap();
        for i in 0..ds.n() {
            assert_eq!(ds.value(i, 0) as u32, ds.label_id(i).unwrap());
        }
    }
}
