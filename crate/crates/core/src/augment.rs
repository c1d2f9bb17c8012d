//! Pseudo-labeling, confidence filtering and class balancing.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FewShotSplit, LabeledExample, Segments, UnlabeledPool, UnlabeledText};
use crate::error::{Error, Result};
use crate::hashing::hash_u64;
use crate::prompt::TaskSpec;
use crate::teacher::{predict_distributions, TeacherModel};

pub const DEFAULT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledExample {
    pub text_a: String,
    pub text_b: Option<String>,
    pub pseudo_label: String,
    pub confidence: f64,
}

impl PseudoLabeledExample {
    pub fn segments(&self) -> Segments<'_> {
        Segments {
            text_a: &self.text_a,
            text_b: self.text_b.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceStrategy {
    /// Downsample every present class to the smallest present class.
    #[default]
    MinCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSet {
    pub examples: Vec<PseudoLabeledExample>,
    pub per_class_counts: BTreeMap<String, usize>,
    pub threshold: f64,
    /// Labels that received no confident pseudo-label.
    pub missing_classes: Vec<String>,
}

impl AugmentedSet {
    pub fn empty(threshold: f64) -> Self {
        Self {
            examples: Vec::new(),
            per_class_counts: BTreeMap::new(),
            threshold,
            missing_classes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Run manifest written next to the augmented set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub threshold: f64,
    pub strategy: BalanceStrategy,
    pub seed: u64,
    pub pool_size: usize,
    pub retained: usize,
    pub per_class_counts: BTreeMap<String, usize>,
    pub missing_classes: Vec<String>,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Validation(format!("threshold must lie in [0, 1), got {threshold}")));
    }
    Ok(())
}

/// Labels every pool text with the teacher's argmax label and keeps only
/// those whose probability is strictly greater than `threshold`.
///
/// The pool is put in content-hash order first, so the result does not
/// depend on how prediction work was scheduled.
pub fn pseudo_label(
    teacher: &TeacherModel,
    pool: &UnlabeledPool,
    spec: &TaskSpec,
    threshold: f64,
) -> Result<Vec<PseudoLabeledExample>> {
    check_threshold(threshold)?;
    let mut texts: Vec<(String, &UnlabeledText)> =
        pool.texts.iter().map(|t| (t.segments().content_key(), t)).collect();
    texts.sort_by(|a, b| a.0.cmp(&b.0));
    let inputs: Vec<Segments<'_>> = texts.iter().map(|(_, t)| t.segments()).collect();
    let dists = predict_distributions(teacher.backend.as_ref(), spec, &teacher.demos, &teacher.config, &inputs)?;

    Ok(texts
        .iter()
        .zip(dists)
        .filter_map(|((_, text), dist)| {
            let (label, confidence) = dist.top();
            (confidence > threshold).then(|| PseudoLabeledExample {
                text_a: text.text_a.clone(),
                text_b: text.text_b.clone(),
                pseudo_label: label.to_string(),
                confidence,
            })
        })
        .collect())
}

pub fn balance_classes(
    items: &[PseudoLabeledExample],
    spec: &TaskSpec,
    strategy: BalanceStrategy,
    seed: u64,
    threshold: f64,
) -> Result<AugmentedSet> {
    let mut by_label: BTreeMap<&str, Vec<&PseudoLabeledExample>> = BTreeMap::new();
    for item in items {
        if !spec.contains_label(&item.pseudo_label) {
            return Err(Error::Validation(format!(
                "pseudo-label `{}` is not in the label space of `{}`",
                item.pseudo_label,
                spec.name()
            )));
        }
        by_label.entry(item.pseudo_label.as_str()).or_default().push(item);
    }

    let missing_classes: Vec<String> = spec
        .label_space()
        .iter()
        .filter(|l| !by_label.contains_key(l.as_str()))
        .cloned()
        .collect();
    if by_label.is_empty() {
        log::warn!("no confident pseudo-labels: augmentation is empty");
        return Ok(AugmentedSet {
            missing_classes,
            ..AugmentedSet::empty(threshold)
        });
    }
    if !missing_classes.is_empty() {
        log::warn!("no confident pseudo-labels for classes: {}", missing_classes.join(", "));
    }

    let cap = match strategy {
        BalanceStrategy::MinCap => by_label.values().map(Vec::len).min().unwrap_or(0),
    };
    let mut examples = Vec::with_capacity(cap * by_label.len());
    let mut per_class_counts = BTreeMap::new();
    for label in spec.label_space() {
        let Some(members) = by_label.get(label.as_str()) else {
            continue;
        };
        let mut members = members.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(hash_u64([
            b"balance".as_slice(),
            &seed.to_le_bytes(),
            label.as_bytes(),
        ]));
        // Random order first, then a stable sort: equal confidences keep the
        // seeded random order.
        members.shuffle(&mut rng);
        members.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        examples.extend(members.into_iter().take(cap).cloned());
        per_class_counts.insert(label.clone(), cap);
    }
    Ok(AugmentedSet {
        examples,
        per_class_counts,
        threshold,
        missing_classes,
    })
}

/// One row of the classifier's training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainItem {
    pub example: LabeledExample,
    pub weight: f64,
    pub gold: bool,
}

/// Union of the gold train split and the augmented set. Pseudo-labels are
/// hard labels with weight 1; an augmented text that duplicates a gold text
/// is dropped so the gold label wins.
pub fn merge_train(aug: &AugmentedSet, split: &FewShotSplit) -> Vec<TrainItem> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(split.train.len() + aug.len());
    for example in &split.train {
        seen.insert(example.content_key());
        out.push(TrainItem {
            example: example.clone(),
            weight: 1.0,
            gold: true,
        });
    }
    for item in &aug.examples {
        if seen.insert(item.segments().content_key()) {
            out.push(TrainItem {
                example: LabeledExample {
                    text_a: item.text_a.clone(),
                    text_b: item.text_b.clone(),
                    label: item.pseudo_label.clone(),
                },
                weight: 1.0,
                gold: false,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::default_task;

    fn item(text: &str, label: &str, confidence: f64) -> PseudoLabeledExample {
        PseudoLabeledExample {
            text_a: text.into(),
            text_b: None,
            pseudo_label: label.into(),
            confidence,
        }
    }

    fn many(label: &str, n: usize) -> Vec<PseudoLabeledExample> {
        (0..n)
            .map(|i| item(&format!("{label} {i}"), label, 0.91 + (i % 7) as f64 * 0.01))
            .collect()
    }

    #[test]
    fn min_cap_downsamples_to_smallest_class() {
        let spec = default_task("sst-2").unwrap();
        let mut items = many("negative", 100);
        items.extend(many("positive", 40));
        let set = balance_classes(&items, &spec, BalanceStrategy::MinCap, 1, 0.9).unwrap();
        assert_eq!(set.per_class_counts, BTreeMap::from([("negative".into(), 40), ("positive".into(), 40)]));
        assert_eq!(set.len(), 80);
        // Highest confidences survive the cut.
        let kept_min = set
            .examples
            .iter()
            .filter(|e| e.pseudo_label == "negative")
            .map(|e| e.confidence)
            .fold(f64::INFINITY, f64::min);
        let dropped_max = items
            .iter()
            .filter(|e| e.pseudo_label == "negative" && !set.examples.contains(e))
            .map(|e| e.confidence)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(kept_min >= dropped_max);
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let spec = default_task("sst-2").unwrap();
        let mut items = many("negative", 40);
        items.extend(many("positive", 40));
        let set = balance_classes(&items, &spec, BalanceStrategy::MinCap, 1, 0.9).unwrap();
        assert_eq!(set.len(), 80);
        assert!(items.iter().all(|i| set.examples.contains(i)));
    }

    #[test]
    fn absent_class_stays_absent() {
        let spec = default_task("sst-2").unwrap();
        let set = balance_classes(&many("negative", 7), &spec, BalanceStrategy::MinCap, 1, 0.9).unwrap();
        assert_eq!(set.per_class_counts, BTreeMap::from([("negative".into(), 7)]));
        assert_eq!(set.missing_classes, vec!["positive".to_string()]);

        let empty = balance_classes(&[], &spec, BalanceStrategy::MinCap, 1, 0.9).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.missing_classes.len(), 2);
    }

    #[test]
    fn balancing_is_seeded() {
        let spec = default_task("sst-2").unwrap();
        let mut items: Vec<_> = (0..30).map(|i| item(&format!("n{i}"), "negative", 0.95)).collect();
        items.extend(many("positive", 10));
        let a = balance_classes(&items, &spec, BalanceStrategy::MinCap, 3, 0.9).unwrap();
        let b = balance_classes(&items, &spec, BalanceStrategy::MinCap, 3, 0.9).unwrap();
        assert_eq!(a, b);
        let c = balance_classes(&items, &spec, BalanceStrategy::MinCap, 4, 0.9).unwrap();
        assert_ne!(a.examples, c.examples);
    }

    #[test]
    fn unknown_pseudo_label_is_rejected() {
        let spec = default_task("sst-2").unwrap();
        assert!(balance_classes(&[item("x", "neutral", 0.95)], &spec, BalanceStrategy::MinCap, 1, 0.9).is_err());
    }

    fn split(n: usize) -> FewShotSplit {
        FewShotSplit {
            train: (0..n)
                .map(|i| LabeledExample::single(format!("gold {i}"), if i % 2 == 0 { "negative" } else { "positive" }))
                .collect(),
            dev: vec![],
            seed: 0,
            k: n / 2,
        }
    }

    #[test]
    fn merge_is_a_disjoint_union() {
        let mut aug = AugmentedSet::empty(0.9);
        aug.examples = (0..4000).map(|i| item(&format!("aug {i}"), "positive", 0.95)).collect();
        let merged = merge_train(&aug, &split(32));
        assert_eq!(merged.len(), 4032);
        assert!(merged.iter().all(|m| m.weight == 1.0));
        assert_eq!(merged.iter().filter(|m| m.gold).count(), 32);
    }

    #[test]
    fn gold_label_wins_on_overlap() {
        let mut aug = AugmentedSet::empty(0.9);
        aug.examples = (0..3997).map(|i| item(&format!("aug {i}"), "positive", 0.95)).collect();
        // Three texts duplicate gold examples with conflicting labels.
        for i in [0, 2, 4] {
            aug.examples.push(item(&format!("gold  {i}"), "positive", 0.99));
        }
        let merged = merge_train(&aug, &split(32));
        assert_eq!(merged.len(), 3997 + 32);
        for i in [0, 2, 4] {
            let text = format!("gold {i}");
            let rows: Vec<_> = merged.iter().filter(|m| m.example.text_a == text).collect();
            assert_eq!(rows.len(), 1);
            assert_eq!(rows[0].example.label, "negative");
            assert!(rows[0].gold);
        }
    }

    #[test]
    fn empty_augmentation_degrades_to_gold_only() {
        let merged = merge_train(&AugmentedSet::empty(0.9), &split(32));
        assert_eq!(merged.len(), 32);
        assert!(merged.iter().all(|m| m.gold));
    }

    #[test]
    fn threshold_must_be_below_one() {
        assert!(check_threshold(0.0).is_ok());
        assert!(check_threshold(0.9).is_ok());
        assert!(check_threshold(1.0).is_err());
        assert!(check_threshold(-0.1).is_err());
    }
}
