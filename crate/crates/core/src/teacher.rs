//! Prompt-based finetuning of the teacher with demonstrations, and the
//! learning-rate x gradient-accumulation grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::TeacherBackend;
use crate::corpus::{FewShotSplit, LabeledExample, Segments};
use crate::error::{Error, Result};
use crate::hashing::hash_u64;
use crate::numeric::{argmax, softmax};
use crate::prompt::{append_rendered, apply_template, demonstration_segments, DemonstrationSet, TaskSpec, DEFAULT_SEPARATOR};

const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherTrainConfig {
    pub batch_size: usize,
    /// Token budget for input plus demonstrations (whitespace tokens).
    pub max_seq_len: usize,
    /// Parameter updates; each spans `grad_accum_steps` micro-batches.
    pub max_steps: usize,
    pub learning_rate: f64,
    pub grad_accum_steps: usize,
    pub seed: u64,
    pub separator: String,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            max_seq_len: 128,
            max_steps: 2000,
            learning_rate: 1e-5,
            grad_accum_steps: 1,
            seed: 42,
            separator: DEFAULT_SEPARATOR.to_string(),
        }
    }
}

impl TeacherTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_seq_len == 0 || self.grad_accum_steps == 0 {
            return Err(Error::Validation(
                "teacher batch_size, max_seq_len and grad_accum_steps must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Validation(format!(
                "teacher learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpace {
    pub learning_rates: Vec<f64>,
    pub grad_accum: Vec<usize>,
}

impl Default for GridSpace {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-5, 2e-5],
            grad_accum: vec![1, 2],
        }
    }
}

impl GridSpace {
    /// The cartesian product, ordered by (learning rate, accumulation)
    /// ascending. That order is also the tie-break order.
    pub fn variants(&self) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = self
            .learning_rates
            .iter()
            .flat_map(|&lr| self.grad_accum.iter().map(move |&g| (lr, g)))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.grad_accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A finetuned teacher together with everything needed to render its inputs.
pub struct TeacherModel {
    pub backend: Box<dyn TeacherBackend>,
    pub dev_accuracy: f64,
    pub config: TeacherTrainConfig,
    pub demos: DemonstrationSet,
}

impl std::fmt::Debug for TeacherModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TeacherModel")
            .field("dev_accuracy", &self.dev_accuracy)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Renders the teacher input: template, then demonstrations in label order.
/// Demonstrations that do not fit in `max_seq_len` are dropped from the end;
/// the input and its mask slot are never cut.
pub fn render_teacher_input<'a>(
    spec: &TaskSpec,
    example: impl Into<Segments<'a>>,
    demos: &DemonstrationSet,
    cfg: &TeacherTrainConfig,
) -> Result<String> {
    let prompt = apply_template(spec, example)?;
    let segments = demonstration_segments(demos, spec)?;
    let mut keep = segments.len();
    loop {
        let rendered = append_rendered(&prompt, &segments[..keep], &cfg.separator)?;
        if keep == 0 || token_count(&rendered.rendered) <= cfg.max_seq_len {
            return Ok(rendered.rendered);
        }
        keep -= 1;
    }
}

/// Probabilities over the label space, normalized over label words only.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub labels: Vec<String>,
    pub probabilities: Vec<f64>,
}

impl LabelDistribution {
    pub fn from_logits(spec: &TaskSpec, logits: &[f64]) -> Result<Self> {
        if logits.len() != spec.num_labels() || logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Contract(format!(
                "teacher returned {} logits for {} labels (or non-finite values)",
                logits.len(),
                spec.num_labels()
            )));
        }
        Ok(Self {
            labels: spec.label_space().to_vec(),
            probabilities: softmax(logits),
        })
    }

    /// The most probable label and its probability; ties go to the label
    /// listed first in the label space.
    pub fn top(&self) -> (&str, f64) {
        let i = argmax(&self.probabilities).expect("label space is non-empty");
        (&self.labels[i], self.probabilities[i])
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.probabilities[i])
    }
}

/// Label distributions for many inputs, predicted in parallel chunks.
pub fn predict_distributions(
    backend: &dyn TeacherBackend,
    spec: &TaskSpec,
    demos: &DemonstrationSet,
    cfg: &TeacherTrainConfig,
    inputs: &[Segments<'_>],
) -> Result<Vec<LabelDistribution>> {
    let words = spec.label_words();
    let rendered = inputs
        .iter()
        .map(|s| render_teacher_input(spec, *s, demos, cfg))
        .collect::<Result<Vec<_>>>()?;
    let chunks: Vec<Vec<Vec<f64>>> = rendered
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| backend.predict(chunk, &words))
        .collect::<Result<_>>()?;
    let logits: Vec<Vec<f64>> = chunks.into_iter().flatten().collect();
    if logits.len() != inputs.len() {
        return Err(Error::Contract("teacher returned the wrong number of predictions".into()));
    }
    logits.iter().map(|l| LabelDistribution::from_logits(spec, l)).collect()
}

pub fn predict_label_distribution<'a>(
    model: &TeacherModel,
    spec: &TaskSpec,
    text: impl Into<Segments<'a>>,
) -> Result<LabelDistribution> {
    let mut out = predict_distributions(model.backend.as_ref(), spec, &model.demos, &model.config, &[text.into()])?;
    Ok(out.remove(0))
}

/// Accuracy of the argmax label word over `examples`.
pub fn evaluate(
    backend: &dyn TeacherBackend,
    spec: &TaskSpec,
    demos: &DemonstrationSet,
    cfg: &TeacherTrainConfig,
    examples: &[LabeledExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Contract("cannot evaluate the teacher on an empty set".into()));
    }
    let inputs: Vec<Segments<'_>> = examples.iter().map(LabeledExample::segments).collect();
    let dists = predict_distributions(backend, spec, demos, cfg, &inputs)?;
    let correct = dists
        .iter()
        .zip(examples)
        .filter(|(d, e)| d.top().0 == e.label)
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

fn training_failure(e: Error) -> Error {
    match e {
        Error::Training(_) => e,
        other => Error::Training(format!("teacher backend failure: {other}")),
    }
}

/// Prompt-finetunes `backend` on the train split and scores it on dev.
pub fn finetune(
    mut backend: Box<dyn TeacherBackend>,
    split: &FewShotSplit,
    spec: &TaskSpec,
    demos: &DemonstrationSet,
    cfg: &TeacherTrainConfig,
) -> Result<TeacherModel> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Validation("teacher train split is empty".into()));
    }
    let texts = split
        .train
        .iter()
        .map(|e| render_teacher_input(spec, e, demos, cfg))
        .collect::<Result<Vec<_>>>()?;
    let gold = split
        .train
        .iter()
        .map(|e| crate::prompt::verbalize(spec, &e.label).map(str::to_string))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(hash_u64([b"teacher-order".as_slice(), &cfg.seed.to_le_bytes()]));
    let n = texts.len();
    let mut order: Vec<usize> = Vec::new();
    let mut next_index = move |rng: &mut ChaCha8Rng| {
        if order.is_empty() {
            order = (0..n).collect();
            order.shuffle(rng);
            order.reverse();
        }
        order.pop().expect("refilled")
    };

    for step in 0..cfg.max_steps {
        for micro in 0..cfg.grad_accum_steps {
            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| next_index(&mut rng)).collect();
            let batch_texts: Vec<String> = idx.iter().map(|&i| texts[i].clone()).collect();
            let batch_gold: Vec<String> = idx.iter().map(|&i| gold[i].clone()).collect();
            let apply = micro + 1 == cfg.grad_accum_steps;
            let loss = backend
                .train_batch(&batch_texts, &batch_gold, cfg.learning_rate, apply)
                .map_err(training_failure)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite teacher loss at step {}", step + 1)));
            }
        }
    }

    let dev_accuracy = evaluate(backend.as_ref(), spec, demos, cfg, &split.dev)?;
    if dev_accuracy.is_nan() {
        return Err(Error::Contract("teacher dev accuracy is NaN".into()));
    }
    Ok(TeacherModel {
        backend,
        dev_accuracy,
        config: cfg.clone(),
        demos: demos.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub learning_rate: f64,
    pub grad_accum_steps: usize,
    pub dev_accuracy: Option<f64>,
    /// Checkpoint saved right after this variant finished training.
    pub artifact_id: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct GridOutcome {
    pub best: TeacherModel,
    pub best_artifact: String,
    pub variants: Vec<VariantResult>,
}

fn train_variant(
    backend_factory: &dyn Fn(&TeacherTrainConfig) -> Result<Box<dyn TeacherBackend>>,
    split: &FewShotSplit,
    spec: &TaskSpec,
    demos: &DemonstrationSet,
    cfg: &TeacherTrainConfig,
) -> Result<(TeacherModel, String)> {
    let model = finetune(backend_factory(cfg)?, split, spec, demos, cfg)?;
    let artifact = model.backend.save()?;
    Ok((model, artifact))
}

/// Trains one teacher per grid point and keeps the best on dev. Ties go
/// to the lower learning rate, then the lower accumulation count.
///
/// Every variant is checkpointed as soon as it finishes, and the winner's
/// checkpoint is loaded back at the end: backends that share one set of
/// remote weights would otherwise be left holding the last variant.
pub fn grid_search(
    backend_factory: &dyn Fn(&TeacherTrainConfig) -> Result<Box<dyn TeacherBackend>>,
    split: &FewShotSplit,
    spec: &TaskSpec,
    demos: &DemonstrationSet,
    base: &TeacherTrainConfig,
    grid: &GridSpace,
) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::Validation("teacher grid is empty".into()));
    }
    let mut best: Option<(TeacherModel, String)> = None;
    let mut variants = Vec::with_capacity(grid.len());
    for (learning_rate, grad_accum_steps) in grid.variants() {
        let cfg = TeacherTrainConfig {
            learning_rate,
            grad_accum_steps,
            ..base.clone()
        };
        match train_variant(backend_factory, split, spec, demos, &cfg) {
            Ok((model, artifact)) => {
                log::info!(
                    "teacher variant lr={learning_rate:e} accum={grad_accum_steps}: dev accuracy {:.4}",
                    model.dev_accuracy
                );
                variants.push(VariantResult {
                    learning_rate,
                    grad_accum_steps,
                    dev_accuracy: Some(model.dev_accuracy),
                    artifact_id: Some(artifact.clone()),
                    error: None,
                });
                if best.as_ref().is_none_or(|(b, _)| model.dev_accuracy > b.dev_accuracy) {
                    best = Some((model, artifact));
                }
            }
            Err(e) => {
                log::warn!("teacher variant lr={learning_rate:e} accum={grad_accum_steps} failed: {e}");
                variants.push(VariantResult {
                    learning_rate,
                    grad_accum_steps,
                    dev_accuracy: None,
                    artifact_id: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    match best {
        Some((mut best, best_artifact)) => {
            best.backend.load(&best_artifact)?;
            Ok(GridOutcome {
                best,
                best_artifact,
                variants,
            })
        }
        None => Err(Error::GridFailed(
            variants.into_iter().filter_map(|v| v.error).collect(),
        )),
    }
}
