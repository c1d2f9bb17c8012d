//! Cloze templates, verbalizers and demonstrations.
//!
//! A [`TaskSpec`] turns raw text segments into a templated input with exactly
//! one `[MASK]` slot. Label words produced by the verbalizer fill that slot in
//! demonstrations; the slot of the input itself always stays unresolved.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FewShotSplit, LabeledExample, Segments};
use crate::error::{Error, Result};
use crate::hashing::hash_u64;

pub const MASK_TOKEN: &str = "[MASK]";
pub const DEFAULT_SEPARATOR: &str = "[SEP]";

static DEFAULT_REGISTRY: &str = include_str!("../tasks.json");

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Text,
    TextA,
    TextB,
    Mask,
}

fn parse_template(template: &str) -> Result<Vec<Piece>> {
    const MARKERS: [(&str, Piece); 4] = [
        ("<X1>", Piece::TextA),
        ("<X2>", Piece::TextB),
        ("<X>", Piece::Text),
        (MASK_TOKEN, Piece::Mask),
    ];
    let mut pieces = Vec::new();
    let mut literal = String::new();
    let mut rest = template;
    'outer: while !rest.is_empty() {
        for (marker, piece) in MARKERS.iter() {
            if let Some(tail) = rest.strip_prefix(marker) {
                if !literal.is_empty() {
                    pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                }
                pieces.push(piece.clone());
                rest = tail;
                continue 'outer;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        literal.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    if !literal.is_empty() {
        pieces.push(Piece::Literal(literal));
    }
    Ok(pieces)
}

/// On-disk form of a registry entry; the name is the registry key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpecDef {
    pub template: String,
    pub is_pair: bool,
    pub label_space: Vec<String>,
    pub verbalizer: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment_budget: Option<usize>,
}

/// Label space, template and verbalizer of one classification task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    name: String,
    def: TaskSpecDef,
    pieces: Vec<Piece>,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, def: TaskSpecDef) -> Result<Self> {
        let name = name.into();
        let pieces = parse_template(&def.template)?;
        let count = |p: &Piece| pieces.iter().filter(|q| *q == p).count();

        if count(&Piece::Mask) != 1 {
            return Err(Error::Template(format!(
                "task `{name}`: template must contain exactly one {MASK_TOKEN}, found {}",
                count(&Piece::Mask)
            )));
        }
        let (single, a, b) = (count(&Piece::Text), count(&Piece::TextA), count(&Piece::TextB));
        let arity_ok = if def.is_pair {
            single == 0 && a == 1 && b == 1
        } else {
            single == 1 && a == 0 && b == 0
        };
        if !arity_ok {
            return Err(Error::Template(format!(
                "task `{name}`: placeholders do not match is_pair={} (<X>: {single}, <X1>: {a}, <X2>: {b})",
                def.is_pair
            )));
        }

        if def.label_space.len() < 2 {
            return Err(Error::Validation(format!(
                "task `{name}`: label space needs at least 2 labels"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for label in &def.label_space {
            if !seen.insert(label) {
                return Err(Error::Validation(format!(
                    "task `{name}`: duplicate label `{label}`"
                )));
            }
            if !def.verbalizer.contains_key(label) {
                return Err(Error::Validation(format!(
                    "task `{name}`: label `{label}` has no verbalizer entry"
                )));
            }
        }
        if let Some(extra) = def.verbalizer.keys().find(|k| !seen.contains(k)) {
            return Err(Error::Validation(format!(
                "task `{name}`: verbalizer entry `{extra}` is not in the label space"
            )));
        }
        let mut words = std::collections::BTreeSet::new();
        for word in def.verbalizer.values() {
            if word.contains(MASK_TOKEN) || word.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "task `{name}`: invalid label word `{word}`"
                )));
            }
            if !words.insert(word) {
                return Err(Error::Validation(format!(
                    "task `{name}`: verbalizer is not injective (`{word}` used twice)"
                )));
            }
        }

        Ok(Self { name, def, pieces })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn label_space(&self) -> &[String] {
        &self.def.label_space
    }

    pub fn num_labels(&self) -> usize {
        self.def.label_space.len()
    }

    pub fn template(&self) -> &str {
        &self.def.template
    }

    pub fn is_pair(&self) -> bool {
        self.def.is_pair
    }

    pub fn augment_budget(&self) -> Option<usize> {
        self.def.augment_budget
    }

    pub fn definition(&self) -> &TaskSpecDef {
        &self.def
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.def.label_space.iter().position(|l| l == label)
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.label_index(label).is_some()
    }

    /// Label words in label-space order.
    pub fn label_words(&self) -> Vec<String> {
        self.def
            .label_space
            .iter()
            .map(|l| self.def.verbalizer[l].clone())
            .collect()
    }

    /// Inverse of [`verbalize`].
    pub fn label_for_word(&self, word: &str) -> Option<&str> {
        self.def
            .verbalizer
            .iter()
            .find(|(_, w)| w.as_str() == word)
            .map(|(l, _)| l.as_str())
    }
}

/// Loads a registry file: a JSON map from task name to [`TaskSpecDef`].
pub fn load_registry(path: &Path) -> Result<BTreeMap<String, TaskSpec>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_registry(&raw)
}

pub fn parse_registry(json: &str) -> Result<BTreeMap<String, TaskSpec>> {
    let defs: BTreeMap<String, TaskSpecDef> = serde_json::from_str(json)?;
    defs.into_iter()
        .map(|(name, def)| Ok((name.clone(), TaskSpec::new(name, def)?)))
        .collect()
}

/// The eight benchmark tasks with their manual templates and label words.
pub fn default_registry() -> BTreeMap<String, TaskSpec> {
    parse_registry(DEFAULT_REGISTRY).expect("bundled task registry is valid")
}

pub fn default_task(name: &str) -> Result<TaskSpec> {
    default_registry()
        .remove(name)
        .ok_or_else(|| Error::Validation(format!("unknown task `{name}`")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub rendered: String,
    /// Character offset of the unresolved mask slot.
    pub mask_slot_index: usize,
    pub demonstrations_appended: bool,
}

impl PromptText {
    pub fn unresolved_masks(&self) -> usize {
        count_masks(&self.rendered)
    }
}

pub fn count_masks(text: &str) -> usize {
    text.matches(MASK_TOKEN).count()
}

fn render_pieces(spec: &TaskSpec, segments: Segments<'_>) -> Result<String> {
    match (spec.is_pair(), segments.text_b) {
        (true, None) => {
            return Err(Error::Template(format!(
                "task `{}` expects a sentence pair, got a single segment",
                spec.name
            )))
        }
        (false, Some(_)) => {
            return Err(Error::Template(format!(
                "task `{}` expects a single segment, got a pair",
                spec.name
            )))
        }
        _ => {}
    }
    if segments.text_a.contains(MASK_TOKEN) || segments.text_b.is_some_and(|b| b.contains(MASK_TOKEN)) {
        return Err(Error::Template(format!(
            "input text contains the reserved token {MASK_TOKEN}"
        )));
    }

    let mut out = String::new();
    for piece in &spec.pieces {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Text | Piece::TextA => out.push_str(segments.text_a),
            Piece::TextB => out.push_str(segments.text_b.unwrap_or_default()),
            Piece::Mask => out.push_str(MASK_TOKEN),
        }
    }
    Ok(out)
}

/// Renders `F_T(X)`: placeholders are replaced verbatim by the segments.
pub fn apply_template<'a>(spec: &TaskSpec, example: impl Into<Segments<'a>>) -> Result<PromptText> {
    let rendered = render_pieces(spec, example.into())?;
    let byte_offset = rendered.find(MASK_TOKEN).expect("template has one mask");
    let mask_slot_index = rendered[..byte_offset].chars().count();
    Ok(PromptText {
        rendered,
        mask_slot_index,
        demonstrations_appended: false,
    })
}

pub fn verbalize<'s>(spec: &'s TaskSpec, label: &str) -> Result<&'s str> {
    spec.def
        .verbalizer
        .get(label)
        .map(String::as_str)
        .ok_or_else(|| Error::Validation(format!("unknown label `{label}` for task `{}`", spec.name)))
}

/// One training example per label, fixed for a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    /// In label-space order.
    pub demos: Vec<LabeledExample>,
    pub seed: u64,
}

impl DemonstrationSet {
    pub fn get(&self, label: &str) -> Option<&LabeledExample> {
        self.demos.iter().find(|d| d.label == label)
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }
}

pub fn sample_demonstrations(split: &FewShotSplit, spec: &TaskSpec, seed: u64) -> Result<DemonstrationSet> {
    let mut demos = Vec::with_capacity(spec.num_labels());
    for label in spec.label_space() {
        let candidates: Vec<&LabeledExample> = split.train.iter().filter(|e| &e.label == label).collect();
        if candidates.is_empty() {
            return Err(Error::InsufficientData {
                label: label.clone(),
                have: 0,
                need: 1,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hash_u64([
            b"demonstration".as_slice(),
            &seed.to_le_bytes(),
            label.as_bytes(),
        ]));
        demos.push(candidates[rng.random_range(0..candidates.len())].clone());
    }
    Ok(DemonstrationSet { demos, seed })
}

/// A templated example with its mask slot filled by the label word.
pub fn render_demonstration(spec: &TaskSpec, demo: &LabeledExample) -> Result<String> {
    let word = verbalize(spec, &demo.label)?;
    let prompt = apply_template(spec, demo)?;
    Ok(prompt.rendered.replacen(MASK_TOKEN, word, 1))
}

fn join_separator(separator: &str) -> String {
    if separator.is_empty() {
        " ".to_string()
    } else {
        format!(" {separator} ")
    }
}

/// Appends already-rendered demonstration segments after `prompt`.
pub fn append_rendered(prompt: &PromptText, segments: &[String], separator: &str) -> Result<PromptText> {
    if prompt.demonstrations_appended {
        return Err(Error::State("demonstrations already appended".into()));
    }
    let joiner = join_separator(separator);
    let mut rendered = prompt.rendered.clone();
    for seg in segments {
        rendered.push_str(&joiner);
        rendered.push_str(seg);
    }
    Ok(PromptText {
        rendered,
        mask_slot_index: prompt.mask_slot_index,
        demonstrations_appended: true,
    })
}

/// Appends one filled-in demonstration per label, in label-space order.
pub fn append_demonstrations(
    prompt: &PromptText,
    demos: &DemonstrationSet,
    spec: &TaskSpec,
    separator: &str,
) -> Result<PromptText> {
    if prompt.demonstrations_appended {
        return Err(Error::State("demonstrations already appended".into()));
    }
    let segments = demonstration_segments(demos, spec)?;
    append_rendered(prompt, &segments, separator)
}

pub fn demonstration_segments(demos: &DemonstrationSet, spec: &TaskSpec) -> Result<Vec<String>> {
    spec.label_space()
        .iter()
        .map(|label| {
            let demo = demos.get(label).ok_or_else(|| Error::InsufficientData {
                label: label.clone(),
                have: 0,
                need: 1,
            })?;
            render_demonstration(spec, demo)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledExample;

    fn sst2() -> TaskSpec {
        default_task("sst-2").unwrap()
    }

    fn figure_spec() -> TaskSpec {
        TaskSpec::new(
            "sst-2-figure",
            TaskSpecDef {
                template: "<X> It was [MASK]".into(),
                is_pair: false,
                label_space: vec!["negative".into(), "positive".into()],
                verbalizer: [("negative", "terrible"), ("positive", "great")]
                    .into_iter()
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .collect(),
                augment_budget: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn renders_single_sentence_template() {
        let p = apply_template(&sst2(), &LabeledExample::single("no apparent joy", "negative")).unwrap();
        assert_eq!(p.rendered, "no apparent joy . It was [MASK] .");
        assert_eq!(p.mask_slot_index, "no apparent joy . It was ".len());
        assert_eq!(p.unresolved_masks(), 1);
    }

    #[test]
    fn renders_mask_first_and_pair_templates() {
        let trec = default_task("trec").unwrap();
        let p = apply_template(&trec, Segments::single("q")).unwrap();
        assert_eq!(p.rendered, "[MASK] question: q");
        assert_eq!(p.mask_slot_index, 0);

        let mrpc = default_task("mrpc").unwrap();
        let p = apply_template(&mrpc, Segments::pair("q1", "q2")).unwrap();
        assert_eq!(p.rendered, "q1 ? [MASK] , q2");
    }

    #[test]
    fn mask_offset_counts_characters() {
        let p = apply_template(&sst2(), Segments::single("café")).unwrap();
        assert_eq!(p.mask_slot_index, "café . It was ".chars().count());
    }

    #[test]
    fn arity_mismatch_is_template_error() {
        let mrpc = default_task("mrpc").unwrap();
        assert!(matches!(apply_template(&mrpc, Segments::single("a")), Err(Error::Template(_))));
        assert!(matches!(apply_template(&sst2(), Segments::pair("a", "b")), Err(Error::Template(_))));
    }

    #[test]
    fn input_containing_mask_is_rejected() {
        assert!(matches!(
            apply_template(&sst2(), Segments::single("a [MASK] b")),
            Err(Error::Template(_))
        ));
    }

    #[test]
    fn verbalizer_lookups() {
        assert_eq!(verbalize(&sst2(), "positive").unwrap(), "great");
        let snli = default_task("snli").unwrap();
        assert_eq!(verbalize(&snli, "contradiction").unwrap(), "no");
        let trec = default_task("trec").unwrap();
        for label in trec.label_space() {
            assert_eq!(verbalize(&trec, label).unwrap(), label);
        }
        assert!(matches!(verbalize(&sst2(), "neutral"), Err(Error::Validation(_))));
    }

    #[test]
    fn verbalizer_inverse_is_identity_on_words() {
        for spec in default_registry().values() {
            for word in spec.label_words() {
                let label = spec.label_for_word(&word).unwrap();
                assert_eq!(verbalize(spec, label).unwrap(), word);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut def = sst2().definition().clone();
        def.template = "<X> [MASK] [MASK]".into();
        assert!(matches!(TaskSpec::new("x", def), Err(Error::Template(_))));

        let mut def = sst2().definition().clone();
        def.verbalizer.insert("positive".into(), "bad".into());
        assert!(matches!(TaskSpec::new("x", def), Err(Error::Validation(_))));

        let mut def = sst2().definition().clone();
        def.verbalizer.remove("positive");
        assert!(TaskSpec::new("x", def).is_err());

        let mut def = sst2().definition().clone();
        def.label_space.truncate(1);
        assert!(TaskSpec::new("x", def).is_err());

        let mut def = sst2().definition().clone();
        def.template = "<X1> [MASK]".into();
        assert!(matches!(TaskSpec::new("x", def), Err(Error::Template(_))));
    }

    #[test]
    fn figure_style_demonstration_segment() {
        let spec = figure_spec();
        let demo = LabeledExample::single("The worst film a man has made.", "negative");
        assert_eq!(
            render_demonstration(&spec, &demo).unwrap(),
            "The worst film a man has made. It was terrible"
        );
    }

    #[test]
    fn appended_prompt_keeps_one_unresolved_mask() {
        let spec = figure_spec();
        let demos = DemonstrationSet {
            demos: vec![
                LabeledExample::single("The worst film a man has made.", "negative"),
                LabeledExample::single("A masterpiece.", "positive"),
            ],
            seed: 0,
        };
        let prompt = apply_template(&spec, Segments::single("No apparent joy.")).unwrap();
        let full = append_demonstrations(&prompt, &demos, &spec, DEFAULT_SEPARATOR).unwrap();
        assert_eq!(
            full.rendered,
            "No apparent joy. It was [MASK] [SEP] The worst film a man has made. It was terrible [SEP] A masterpiece. It was great"
        );
        assert!(full.rendered.contains("terrible") && full.rendered.contains("great"));
        assert_eq!(full.unresolved_masks(), 1);
        assert_eq!(full.mask_slot_index, prompt.mask_slot_index);
        assert!(matches!(
            append_demonstrations(&full, &demos, &spec, DEFAULT_SEPARATOR),
            Err(Error::State(_))
        ));
        // Re-rendering is deterministic.
        assert_eq!(append_demonstrations(&prompt, &demos, &spec, DEFAULT_SEPARATOR).unwrap(), full);
    }

    #[test]
    fn sampled_demonstrations_cover_each_label_once() {
        let snli = default_task("snli").unwrap();
        let train: Vec<_> = (0..9)
            .map(|i| LabeledExample::pair(format!("p{i}"), format!("h{i}"), snli.label_space()[i % 3].clone()))
            .collect();
        let split = FewShotSplit {
            train,
            dev: vec![],
            seed: 1,
            k: 3,
        };
        let a = sample_demonstrations(&split, &snli, 7).unwrap();
        assert_eq!(a.len(), 3);
        for (demo, label) in a.demos.iter().zip(snli.label_space()) {
            assert_eq!(&demo.label, label);
        }
        assert_eq!(a, sample_demonstrations(&split, &snli, 7).unwrap());

        let mut missing = split.clone();
        missing.train.retain(|e| e.label != "neutral");
        assert!(matches!(
            sample_demonstrations(&missing, &snli, 7),
            Err(Error::InsufficientData { label, .. }) if label == "neutral"
        ));
    }
}
