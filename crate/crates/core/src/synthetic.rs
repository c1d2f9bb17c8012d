//! Toy corpora for desk-scale runs.
//!
//! Every class owns a few cue words. A text is shared filler plus one or
//! more cues of its class plus a unique id token, so texts never collide
//! and a bag-of-words model can separate the classes.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::hashing::hash_u64;
use crate::prompt::TaskSpec;

const FILLER: &[&str] = &[
    "the", "a", "of", "and", "this", "that", "with", "for", "on", "was", "is", "very", "some", "about", "from",
    "just", "more", "than", "one", "time", "after", "before", "they", "there", "really", "still", "quite", "into",
    "over", "again",
];

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "ru", "ten", "vo", "zi", "pe", "sha", "bu", "nor", "qui"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub per_class: usize,
    pub cues_per_class: usize,
    /// Filler tokens per segment.
    pub filler_len: usize,
    /// Probability of a second cue token.
    pub extra_cue_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            per_class: 200,
            cues_per_class: 4,
            filler_len: 6,
            extra_cue_rate: 0.5,
            seed: 0,
        }
    }
}

fn cue_word(label: &str, j: usize, seed: u64) -> String {
    let h = hash_u64([b"cue".as_slice(), &seed.to_le_bytes(), label.as_bytes(), &(j as u64).to_le_bytes()]);
    let word: String = (0..3)
        .map(|i| SYLLABLES[((h >> (8 * i)) % SYLLABLES.len() as u64) as usize])
        .collect();
    format!("{word}{j}")
}

/// Cue vocabulary per label, in label-space order.
pub fn cue_words(spec: &TaskSpec, cfg: &SyntheticConfig) -> Vec<(String, Vec<String>)> {
    spec.label_space()
        .iter()
        .map(|label| {
            let cues = (0..cfg.cues_per_class)
                .map(|j| format!("{}{}", cue_word(label, j, cfg.seed), spec.label_index(label).unwrap_or(0)))
                .collect();
            (label.clone(), cues)
        })
        .collect()
}

fn segment(rng: &mut ChaCha8Rng, cues: &[String], cfg: &SyntheticConfig, id: &str) -> String {
    let mut tokens: Vec<String> = (0..cfg.filler_len)
        .map(|_| FILLER.choose(rng).expect("non-empty filler").to_string())
        .collect();
    let n_cues = if rng.random_bool(cfg.extra_cue_rate) { 2 } else { 1 };
    for _ in 0..n_cues {
        let at = rng.random_range(0..=tokens.len());
        tokens.insert(at, cues.choose(rng).expect("cues").clone());
    }
    tokens.push(id.to_string());
    tokens.join(" ")
}

/// `per_class` examples for every label, interleaved by label. `split`
/// names the random stream and prefixes the id tokens, so corpora drawn
/// for different splits share cue words but never share a text.
pub fn generate(spec: &TaskSpec, cfg: &SyntheticConfig, split: &str) -> Result<Vec<LabeledExample>> {
    if cfg.cues_per_class == 0 || !(0.0..=1.0).contains(&cfg.extra_cue_rate) {
        return Err(Error::Validation(
            "synthetic corpus needs at least one cue per class and an extra-cue rate in [0, 1]".into(),
        ));
    }
    let cues = cue_words(spec, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(hash_u64([
        b"synthetic".as_slice(),
        &cfg.seed.to_le_bytes(),
        spec.name().as_bytes(),
        split.as_bytes(),
    ]));
    let mut out = Vec::with_capacity(cfg.per_class * cues.len());
    for i in 0..cfg.per_class {
        for (c, (label, words)) in cues.iter().enumerate() {
            let id = format!("{split}{i}x{c}");
            let example = if spec.is_pair() {
                let plain = [FILLER[i % FILLER.len()].to_string()];
                let a = segment(&mut rng, &plain, cfg, &format!("{id}a"));
                let b = segment(&mut rng, words, cfg, &format!("{id}b"));
                LabeledExample::pair(a, b, label.clone())
            } else {
                LabeledExample::single(segment(&mut rng, words, cfg, &id), label.clone())
            };
            out.push(example);
        }
    }
    Ok(out)
}
