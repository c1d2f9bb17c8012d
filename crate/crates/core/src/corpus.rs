//! Datasets, seeded K-shot splits and the unlabeled augmentation pool.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{hash_hex, hash_u64, normalize_whitespace};
use crate::jsonl;
use crate::prompt::TaskSpec;

/// Borrowed view of the one or two text segments of an input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segments<'a> {
    pub text_a: &'a str,
    pub text_b: Option<&'a str>,
}

impl<'a> Segments<'a> {
    pub fn single(text_a: &'a str) -> Self {
        Self { text_a, text_b: None }
    }

    pub fn pair(text_a: &'a str, text_b: &'a str) -> Self {
        Self {
            text_a,
            text_b: Some(text_b),
        }
    }

    /// Hash of the whitespace-normalized segments. Labels do not take part,
    /// so labeled and unlabeled copies of a text share a key.
    pub fn content_key(&self) -> String {
        let a = normalize_whitespace(self.text_a);
        match self.text_b {
            None => hash_hex([a.as_bytes(), b"\x00".as_slice()]),
            Some(b) => {
                let b = normalize_whitespace(b);
                hash_hex([a.as_bytes(), b"\x01".as_slice(), b.as_bytes()])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: String,
}

impl LabeledExample {
    pub fn single(text_a: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text_a: text_a.into(),
            text_b: None,
            label: label.into(),
        }
    }

    pub fn pair(text_a: impl Into<String>, text_b: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text_a: text_a.into(),
            text_b: Some(text_b.into()),
            label: label.into(),
        }
    }

    pub fn segments(&self) -> Segments<'_> {
        Segments {
            text_a: &self.text_a,
            text_b: self.text_b.as_deref(),
        }
    }

    pub fn content_key(&self) -> String {
        self.segments().content_key()
    }

    /// Identity of the example: content plus label.
    pub fn example_id(&self) -> String {
        let content = self.content_key();
        hash_hex([content.as_bytes(), self.label.as_bytes()])
    }

    pub fn validate(&self, spec: &TaskSpec) -> Result<()> {
        if self.text_a.trim().is_empty() {
            return Err(Error::Validation("text_a is empty".into()));
        }
        match (spec.is_pair(), &self.text_b) {
            (true, None) => {
                return Err(Error::Validation(format!(
                    "task `{}` is a pair task but text_b is missing",
                    spec.name()
                )))
            }
            (false, Some(_)) => {
                return Err(Error::Validation(format!(
                    "task `{}` is a single-sentence task but text_b is present",
                    spec.name()
                )))
            }
            _ => {}
        }
        if !spec.contains_label(&self.label) {
            return Err(Error::Validation(format!(
                "unknown label `{}` for task `{}`",
                self.label,
                spec.name()
            )));
        }
        Ok(())
    }
}

impl<'a> From<&'a LabeledExample> for Segments<'a> {
    fn from(e: &'a LabeledExample) -> Self {
        e.segments()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledText {
    pub text_a: String,
    pub text_b: Option<String>,
}

impl UnlabeledText {
    pub fn segments(&self) -> Segments<'_> {
        Segments {
            text_a: &self.text_a,
            text_b: self.text_b.as_deref(),
        }
    }
}

impl<'a> From<&'a UnlabeledText> for Segments<'a> {
    fn from(t: &'a UnlabeledText) -> Self {
        t.segments()
    }
}

impl From<&LabeledExample> for UnlabeledText {
    fn from(e: &LabeledExample) -> Self {
        Self {
            text_a: e.text_a.clone(),
            text_b: e.text_b.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
    pub seed: u64,
    pub k: usize,
}

impl FewShotSplit {
    pub fn content_keys(&self) -> HashSet<String> {
        self.train.iter().chain(&self.dev).map(LabeledExample::content_key).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledPool {
    pub texts: Vec<UnlabeledText>,
    pub source: String,
}

impl UnlabeledPool {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    text_a: String,
    #[serde(default)]
    text_b: Option<String>,
    #[serde(default)]
    label: Option<String>,
}

/// Loads a labeled JSONL dataset and validates every record against `spec`.
pub fn load_dataset(path: &Path, spec: &TaskSpec) -> Result<Vec<LabeledExample>> {
    jsonl::read::<RawRecord>(path)?
        .into_iter()
        .map(|(line, raw)| {
            let label = raw.label.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "label is null in a labeled dataset".into(),
            })?;
            let example = LabeledExample {
                text_a: raw.text_a,
                text_b: raw.text_b,
                label,
            };
            example
                .validate(spec)
                .map_err(|e| Error::Validation(format!("{}: line {line}: {e}", path.display())))?;
            Ok(example)
        })
        .collect()
}

/// Loads an unlabeled JSONL file (`"label": null`). Labels present in the
/// file are discarded.
pub fn load_unlabeled(path: &Path, spec: &TaskSpec) -> Result<Vec<UnlabeledText>> {
    let mut dropped = 0usize;
    let texts = jsonl::read::<RawRecord>(path)?
        .into_iter()
        .map(|(line, raw)| {
            if raw.label.is_some() {
                dropped += 1;
            }
            if raw.text_a.trim().is_empty() || raw.text_b.is_some() != spec.is_pair() {
                return Err(Error::Validation(format!(
                    "{}: line {line}: record does not match the segment arity of task `{}`",
                    path.display(),
                    spec.name()
                )));
            }
            Ok(UnlabeledText {
                text_a: raw.text_a,
                text_b: raw.text_b,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if dropped > 0 {
        log::warn!("{}: discarded labels on {dropped} unlabeled records", path.display());
    }
    Ok(texts)
}

pub fn write_dataset(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    jsonl::write(path, examples)
}

fn class_rng(tag: &[u8], seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_u64([tag, &seed.to_le_bytes(), label.as_bytes()]))
}

/// Draws K train and K dev examples per label.
///
/// Input order does not matter: examples are deduplicated by identity and
/// sorted before a per-label shuffle seeded by `(seed, label)`.
pub fn sample_few_shot(data: &[LabeledExample], spec: &TaskSpec, k: usize, seed: u64) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(Error::Validation("K must be positive".into()));
    }
    let mut by_label: BTreeMap<&str, BTreeMap<String, &LabeledExample>> = BTreeMap::new();
    for example in data {
        example.validate(spec)?;
        by_label
            .entry(example.label.as_str())
            .or_default()
            .insert(example.example_id(), example);
    }

    let mut train = Vec::with_capacity(k * spec.num_labels());
    let mut dev = Vec::with_capacity(k * spec.num_labels());
    for label in spec.label_space() {
        let mut members: Vec<&LabeledExample> = by_label
            .get(label.as_str())
            .map(|m| m.values().copied().collect())
            .unwrap_or_default();
        if members.len() < 2 * k {
            return Err(Error::InsufficientData {
                label: label.clone(),
                have: members.len(),
                need: 2 * k,
            });
        }
        members.shuffle(&mut class_rng(b"few-shot", seed, label));
        train.extend(members[..k].iter().map(|e| (*e).clone()));
        dev.extend(members[k..2 * k].iter().map(|e| (*e).clone()));
    }
    Ok(FewShotSplit { train, dev, seed, k })
}

/// Strips labels from `data`, removes anything content-identical to a train
/// or dev member, and keeps at most `cap` texts in content-hash order.
pub fn build_unlabeled_pool(data: &[LabeledExample], split: &FewShotSplit, cap: usize) -> UnlabeledPool {
    let texts: Vec<UnlabeledText> = data.iter().map(UnlabeledText::from).collect();
    pool_from_texts(&texts, split, cap, format!("labeled data minus split (seed {})", split.seed))
}

pub fn pool_from_texts(texts: &[UnlabeledText], split: &FewShotSplit, cap: usize, source: String) -> UnlabeledPool {
    let excluded = split.content_keys();
    let mut kept: BTreeMap<String, &UnlabeledText> = BTreeMap::new();
    for text in texts {
        let key = text.segments().content_key();
        if !excluded.contains(&key) {
            kept.entry(key).or_insert(text);
        }
    }
    UnlabeledPool {
        texts: kept.into_values().take(cap).cloned().collect(),
        source,
    }
}
