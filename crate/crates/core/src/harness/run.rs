use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{Ablation, RunConfig};
use super::report::{RunReport, collect_report};
use crate::augment::{balance_classes, merge_train, pseudo_label, AugmentedSet, PseudoLabeledExample, TrainItem};
use crate::backends::http::{HttpEncoder, HttpTeacher, RetryPolicy};
use crate::backends::mock::{ArtifactStore, MockEncoder, MockTeacher, MockTeacherConfig};
use crate::backends::{Encoder, FeatureCache, FeatureExtractor, TeacherBackend};
use crate::classifier::{self, load_model, save_model, Dataset, MlpModel, ModelArtifact, TrainHistory};
use crate::corpus::{
    build_unlabeled_pool, load_dataset, load_unlabeled, pool_from_texts, sample_few_shot, FewShotSplit,
    LabeledExample, UnlabeledPool, UnlabeledText,
};
use crate::error::{Error, Result};
use crate::hashing::{hash_hex, sha256_hex};
use crate::jsonl;
use crate::prompt::{apply_template, sample_demonstrations, DemonstrationSet, TaskSpec};
use crate::teacher::{evaluate, grid_search, TeacherModel, TeacherTrainConfig, VariantResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Sample,
    Teach,
    Pseudolabel,
    Extract,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Sample,
        Stage::Teach,
        Stage::Pseudolabel,
        Stage::Extract,
        Stage::Train,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Teach => "teach",
            Stage::Pseudolabel => "pseudolabel",
            Stage::Extract => "extract",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown stage `{s}`")))
    }
}

fn in_stage<T>(stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: stage.name(),
            source: Box::new(other),
        },
    })
}

/// Writes through a temporary sibling so a crash never leaves a truncated
/// artifact that a resumed run would trust.
fn persist(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("partial");
    write(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn digest(examples: impl IntoIterator<Item = String>) -> String {
    let ids: Vec<String> = examples.into_iter().collect();
    hash_hex(ids.iter().map(String::as_bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: String,
    pub ablation: Ablation,
    pub seed: u64,
    pub fingerprint: String,
    pub accuracy: f64,
    pub test_size: usize,
    pub classifier_dev_accuracy: Option<f64>,
    pub teacher_dev_accuracy: Option<f64>,
    pub train_size: usize,
    pub augmented: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitRow {
    part: String,
    #[serde(flatten)]
    example: LabeledExample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TeacherRecord {
    artifact_id: String,
    dev_accuracy: f64,
    config: TeacherTrainConfig,
    demos: DemonstrationSet,
    variants: Vec<VariantResult>,
}

/// Inputs shared by every seed.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub unlabeled: Option<Vec<UnlabeledText>>,
}

impl TaskData {
    pub fn load(cfg: &RunConfig, spec: &TaskSpec) -> Result<Self> {
        Ok(Self {
            train: load_dataset(&cfg.data.train, spec)?,
            test: load_dataset(&cfg.data.test, spec)?,
            unlabeled: cfg
                .data
                .unlabeled
                .as_deref()
                .map(|p| load_unlabeled(p, spec))
                .transpose()?,
        })
    }
}

pub enum Backends {
    Mock {
        encoder: MockEncoder,
        teacher: MockTeacherConfig,
    },
    Http {
        encoder: Option<HttpEncoder>,
        teacher_url: Option<String>,
        base_artifact: Option<String>,
        timeout: Duration,
    },
}

impl Backends {
    /// Mock backends plant a label signal for every train and test text;
    /// HTTP backends point at the configured endpoints.
    pub fn from_config(cfg: &RunConfig, spec: &TaskSpec, data: &TaskData) -> Result<Self> {
        match &cfg.mock {
            Some(mock) => {
                let known: Vec<LabeledExample> = data.train.iter().chain(&data.test).cloned().collect();
                Ok(Backends::Mock {
                    encoder: MockEncoder::planted(mock.encoder.clone(), spec, &known)?,
                    teacher: MockTeacherConfig::for_task(spec, &mock.teacher),
                })
            }
            None => {
                let timeout = Duration::from_secs(cfg.endpoints.timeout_secs);
                let encoder = cfg
                    .endpoints
                    .encoder_url
                    .as_deref()
                    .map(|url| HttpEncoder::with_policy(url, timeout, RetryPolicy::default()))
                    .transpose()?;
                Ok(Backends::Http {
                    encoder,
                    teacher_url: cfg.endpoints.teacher_url.clone(),
                    base_artifact: cfg.endpoints.teacher_base_artifact.clone(),
                    timeout,
                })
            }
        }
    }

    pub fn encoder(&self) -> Result<&dyn Encoder> {
        match self {
            Backends::Mock { encoder, .. } => Ok(encoder),
            Backends::Http { encoder: Some(e), .. } => Ok(e),
            Backends::Http { encoder: None, .. } => Err(Error::Validation("no encoder endpoint configured".into())),
        }
    }

    fn connect_teacher(&self, store: &Path) -> Result<Box<dyn TeacherBackend>> {
        match self {
            Backends::Mock { teacher, .. } => Ok(Box::new(MockTeacher::new(
                teacher.clone(),
                ArtifactStore::Dir(store.to_path_buf()),
            )?)),
            Backends::Http { teacher_url, timeout, .. } => {
                let url = teacher_url
                    .as_deref()
                    .ok_or_else(|| Error::Validation("no teacher endpoint configured".into()))?;
                Ok(Box::new(HttpTeacher::with_policy(url, *timeout, RetryPolicy::default())?))
            }
        }
    }

    /// A teacher in its initial state. Mock checkpoints live under `store`.
    ///
    /// A remote teacher keeps its weights between calls, so every grid
    /// variant is reset to the same starting point: the configured base
    /// checkpoint, or a snapshot taken before the first variant trains.
    fn fresh_teacher(&self, store: &Path, snapshot: &Mutex<Option<String>>) -> Result<Box<dyn TeacherBackend>> {
        let mut t = self.connect_teacher(store)?;
        if let Backends::Http { base_artifact, .. } = self {
            let mut snapshot = snapshot.lock().expect("snapshot lock poisoned");
            match base_artifact.as_ref().or(snapshot.as_ref()) {
                Some(id) => t.load(id)?,
                None => *snapshot = Some(t.save()?),
            }
        }
        Ok(t)
    }

    fn restore_teacher(&self, store: &Path, artifact_id: &str) -> Result<Box<dyn TeacherBackend>> {
        let mut t = self.connect_teacher(store)?;
        t.load(artifact_id)?;
        Ok(t)
    }
}

/// Features for the merged train set, the dev split and the test file.
#[derive(Debug, Clone)]
pub struct StageFeatures {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub train_items: Vec<TrainItem>,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub spec: TaskSpec,
    pub data: TaskData,
    pub backends: Backends,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.task_spec()?;
        let data = TaskData::load(&cfg, &spec)?;
        let backends = Backends::from_config(&cfg, &spec, &data)?;
        Ok(Self {
            cfg,
            spec,
            data,
            backends,
        })
    }

    pub fn with_parts(cfg: RunConfig, spec: TaskSpec, data: TaskData, backends: Backends) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            spec,
            data,
            backends,
        })
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.cfg.run_dir(seed)
    }

    /// Runs every configured seed, then aggregates. Seeds run in parallel
    /// with in-process backends; a remote teacher holds one set of weights,
    /// so over HTTP they run one after another.
    pub fn run_all(&self) -> Result<RunReport> {
        let outcomes: Vec<Result<RunResult>> = match self.backends {
            Backends::Mock { .. } => self.cfg.seeds.par_iter().map(|&s| self.run_single(s)).collect(),
            Backends::Http { .. } => self.cfg.seeds.iter().map(|&s| self.run_single(s)).collect(),
        };
        for outcome in outcomes {
            outcome?;
        }
        collect_report(&self.cfg)
    }

    /// Full pipeline for one seed. A finished run is returned from disk;
    /// an interrupted one resumes from its last completed stage.
    pub fn run_single(&self, seed: u64) -> Result<RunResult> {
        let result_path = self.run_dir(seed).join("result.json");
        if result_path.exists() {
            let result: RunResult = jsonl::read_json(&result_path)?;
            if result.fingerprint == self.cfg.fingerprint() && result.seed == seed {
                log::info!("seed {seed}: reusing {}", result_path.display());
                return Ok(result);
            }
        }
        self.run_until(seed, Stage::Eval)?;
        jsonl::read_json(&result_path)
    }

    /// Executes stages up to and including `last`, reusing persisted
    /// artifacts of earlier stages. Returns the manifest entry of `last`.
    pub fn run_until(&self, seed: u64, last: Stage) -> Result<Value> {
        let dir = self.run_dir(seed);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut manifest = Manifest::open(&dir, &self.cfg, seed)?;
        let ablation = self.cfg.ablation;

        let split = in_stage(Stage::Sample, || self.sample(&dir, seed, &mut manifest))?;
        if last == Stage::Sample {
            return manifest.entry(Stage::Sample);
        }

        let teacher = in_stage(Stage::Teach, || self.teach(&dir, seed, &split, &mut manifest))?;
        if last == Stage::Teach {
            return manifest.entry(Stage::Teach);
        }

        if !ablation.trains_classifier() {
            if last > Stage::Teach && last < Stage::Eval {
                manifest.record(last, json!({ "skipped": true }))?;
                return manifest.entry(last);
            }
            let teacher = teacher.expect("teacher-only runs train a teacher");
            in_stage(Stage::Eval, || self.eval_teacher(&dir, seed, &teacher, &mut manifest))?;
            return manifest.entry(Stage::Eval);
        }

        let aug = in_stage(Stage::Pseudolabel, || {
            self.pseudolabel(&dir, seed, &split, teacher.as_ref(), &mut manifest)
        })?;
        if last == Stage::Pseudolabel {
            return manifest.entry(Stage::Pseudolabel);
        }

        let features = in_stage(Stage::Extract, || self.extract(&dir, &split, &aug, &mut manifest))?;
        if last == Stage::Extract {
            return manifest.entry(Stage::Extract);
        }

        let (model, history) = in_stage(Stage::Train, || self.train(&dir, seed, &features, &mut manifest))?;
        if last == Stage::Train {
            return manifest.entry(Stage::Train);
        }

        in_stage(Stage::Eval, || {
            let accuracy = model.accuracy(&features.test)?;
            let best_dev = history
                .epochs
                .iter()
                .find(|e| e.epoch == history.best_epoch)
                .map(|e| e.dev_accuracy);
            let result = RunResult {
                task: self.spec.name().to_string(),
                ablation,
                seed,
                fingerprint: self.cfg.fingerprint(),
                accuracy,
                test_size: features.test.len(),
                classifier_dev_accuracy: best_dev,
                teacher_dev_accuracy: teacher.as_ref().map(|t| t.dev_accuracy),
                train_size: features.train.len(),
                augmented: features.train_items.iter().filter(|i| !i.gold).count(),
            };
            self.finish(&dir, &result, &mut manifest)
        })?;
        manifest.entry(Stage::Eval)
    }

    fn sample(&self, dir: &Path, seed: u64, manifest: &mut Manifest) -> Result<FewShotSplit> {
        let path = dir.join("split.jsonl");
        let split = if path.exists() {
            let mut split = FewShotSplit {
                train: Vec::new(),
                dev: Vec::new(),
                seed,
                k: self.cfg.k,
            };
            for (line, row) in jsonl::read::<SplitRow>(&path)? {
                row.example.validate(&self.spec)?;
                match row.part.as_str() {
                    "train" => split.train.push(row.example),
                    "dev" => split.dev.push(row.example),
                    other => {
                        return Err(Error::Parse {
                            path: path.clone(),
                            line,
                            message: format!("unknown split part `{other}`"),
                        })
                    }
                }
            }
            split
        } else {
            let split = sample_few_shot(&self.data.train, &self.spec, self.cfg.k, seed)?;
            let rows = split
                .train
                .iter()
                .map(|e| ("train", e))
                .chain(split.dev.iter().map(|e| ("dev", e)))
                .map(|(part, e)| SplitRow {
                    part: part.into(),
                    example: e.clone(),
                });
            persist(&path, |tmp| jsonl::write(tmp, rows))?;
            split
        };
        manifest.record(
            Stage::Sample,
            json!({
                "k": split.k,
                "seed": seed,
                "train": split.train.len(),
                "dev": split.dev.len(),
                "digest": digest(split.train.iter().chain(&split.dev).map(LabeledExample::example_id)),
            }),
        )?;
        Ok(split)
    }

    fn teacher_store(dir: &Path) -> PathBuf {
        dir.join("teacher")
    }

    fn teach(&self, dir: &Path, seed: u64, split: &FewShotSplit, manifest: &mut Manifest) -> Result<Option<TeacherModel>> {
        if !self.cfg.ablation.uses_teacher() {
            manifest.record(Stage::Teach, json!({ "skipped": true }))?;
            return Ok(None);
        }
        let path = dir.join("teacher.json");
        let store = Self::teacher_store(dir);
        let record: TeacherRecord = if path.exists() {
            jsonl::read_json(&path)?
        } else {
            let demos = sample_demonstrations(split, &self.spec, seed)?;
            let base = TeacherTrainConfig {
                seed,
                ..self.cfg.teacher.clone()
            };
            let snapshot = Mutex::new(None);
            let factory = |_: &TeacherTrainConfig| self.backends.fresh_teacher(&store, &snapshot);
            let outcome = grid_search(&factory, split, &self.spec, &demos, &base, &self.cfg.grid)?;
            let record = TeacherRecord {
                artifact_id: outcome.best_artifact.clone(),
                dev_accuracy: outcome.best.dev_accuracy,
                config: outcome.best.config.clone(),
                demos,
                variants: outcome.variants,
            };
            persist(&path, |tmp| jsonl::write_json(tmp, &record))?;
            record
        };
        manifest.record(
            Stage::Teach,
            json!({
                "artifact_id": record.artifact_id,
                "dev_accuracy": record.dev_accuracy,
                "learning_rate": record.config.learning_rate,
                "grad_accum_steps": record.config.grad_accum_steps,
                "variants": record.variants,
            }),
        )?;
        Ok(Some(TeacherModel {
            backend: self.backends.restore_teacher(&store, &record.artifact_id)?,
            dev_accuracy: record.dev_accuracy,
            config: record.config,
            demos: record.demos,
        }))
    }

    fn pool(&self, split: &FewShotSplit) -> UnlabeledPool {
        let cap = self.cfg.pool_cap(&self.spec);
        match &self.data.unlabeled {
            Some(texts) => pool_from_texts(texts, split, cap, "unlabeled file minus split".into()),
            None => build_unlabeled_pool(&self.data.train, split, cap),
        }
    }

    fn pseudolabel(
        &self,
        dir: &Path,
        seed: u64,
        split: &FewShotSplit,
        teacher: Option<&TeacherModel>,
        manifest: &mut Manifest,
    ) -> Result<AugmentedSet> {
        let Some(teacher) = teacher else {
            manifest.record(Stage::Pseudolabel, json!({ "skipped": true }))?;
            return Ok(AugmentedSet::empty(self.cfg.threshold));
        };
        let path = dir.join("aug.jsonl");
        let pool = self.pool(split);
        let aug = if path.exists() {
            let examples: Vec<PseudoLabeledExample> = jsonl::read(&path)?.into_iter().map(|(_, e)| e).collect();
            let mut per_class_counts = BTreeMap::new();
            for e in &examples {
                if !self.spec.contains_label(&e.pseudo_label) {
                    return Err(Error::Validation(format!("{}: unknown label `{}`", path.display(), e.pseudo_label)));
                }
                *per_class_counts.entry(e.pseudo_label.clone()).or_insert(0) += 1;
            }
            let missing_classes = self
                .spec
                .label_space()
                .iter()
                .filter(|l| !per_class_counts.contains_key(*l))
                .cloned()
                .collect();
            AugmentedSet {
                examples,
                per_class_counts,
                threshold: self.cfg.threshold,
                missing_classes,
            }
        } else {
            let retained = pseudo_label(teacher, &pool, &self.spec, self.cfg.threshold)?;
            log::info!(
                "seed {seed}: {} of {} pool texts above threshold {}",
                retained.len(),
                pool.len(),
                self.cfg.threshold
            );
            let aug = balance_classes(&retained, &self.spec, self.cfg.balance, seed, self.cfg.threshold)?;
            persist(&path, |tmp| jsonl::write(tmp, &aug.examples))?;
            aug
        };
        manifest.record(
            Stage::Pseudolabel,
            json!({
                "threshold": aug.threshold,
                "strategy": self.cfg.balance,
                "seed": seed,
                "pool_size": pool.len(),
                "retained": aug.len(),
                "per_class_counts": aug.per_class_counts,
                "missing_classes": aug.missing_classes,
                "digest": digest(aug.examples.iter().map(|e| format!("{}\u{1f}{}", e.segments().content_key(), e.pseudo_label))),
            }),
        )?;
        Ok(aug)
    }

    fn dataset(&self, rows: Vec<Vec<f64>>, examples: &[&LabeledExample]) -> Result<Dataset> {
        let labels = examples
            .iter()
            .map(|e| {
                self.spec
                    .label_index(&e.label)
                    .ok_or_else(|| Error::Validation(format!("unknown label `{}`", e.label)))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(&rows, labels)
    }

    fn extract(&self, dir: &Path, split: &FewShotSplit, aug: &AugmentedSet, manifest: &mut Manifest) -> Result<StageFeatures> {
        let encoder = self.backends.encoder()?;
        let cache = FeatureCache::open(&dir.join("features.cache"))?;
        let extractor = FeatureExtractor::new(encoder, Some(&cache), self.cfg.endpoints.fan_out)?;
        let position = self.cfg.ablation.position();
        let layer_mode = self.cfg.ablation.layer_mode();

        let train_items = merge_train(aug, split);
        let featurize = |examples: &[&LabeledExample]| -> Result<Dataset> {
            let texts = examples
                .iter()
                .map(|e| apply_template(&self.spec, *e).map(|p| p.rendered))
                .collect::<Result<Vec<_>>>()?;
            let rows = extractor
                .extract(&texts, position, layer_mode)?
                .into_iter()
                .map(|f| f.values)
                .collect();
            self.dataset(rows, examples)
        };
        let train_examples: Vec<&LabeledExample> = train_items.iter().map(|i| &i.example).collect();
        let features = StageFeatures {
            train: featurize(&train_examples)?,
            dev: featurize(&split.dev.iter().collect::<Vec<_>>())?,
            test: featurize(&self.data.test.iter().collect::<Vec<_>>())?,
            train_items,
        };
        manifest.record(
            Stage::Extract,
            json!({
                "position": position,
                "layer_mode": layer_mode,
                "model_id": extractor.meta().model_id,
                "d": extractor.meta().d,
                "train_rows": features.train.len(),
                "gold_rows": features.train_items.iter().filter(|i| i.gold).count(),
                "train_digest": digest(features.train_items.iter().map(|i| i.example.example_id())),
                "dev_rows": features.dev.len(),
                "test_rows": features.test.len(),
            }),
        )?;
        Ok(features)
    }

    fn train(&self, dir: &Path, seed: u64, features: &StageFeatures, manifest: &mut Manifest) -> Result<(MlpModel, TrainHistory)> {
        let model_path = dir.join("mlp.model");
        let history_path = dir.join("history.json");
        let cfg = self
            .cfg
            .classifier
            .mlp_config(features.train.dim(), self.spec.num_labels(), seed);
        let (model, history) = if model_path.exists() && history_path.exists() {
            let model = load_model(&model_path)?;
            if model.config != cfg {
                return Err(Error::Validation(format!(
                    "{} was trained with a different classifier config",
                    model_path.display()
                )));
            }
            (model, jsonl::read_json(&history_path)?)
        } else {
            let (model, history) = classifier::train(classifier::init(&cfg)?, &features.train, &features.dev, &cfg)?;
            persist(&history_path, |tmp| jsonl::write_json(tmp, &history))?;
            persist(&model_path, |tmp| save_model(tmp, &model))?;
            (model, history)
        };
        manifest.record(
            Stage::Train,
            json!({
                "parameters": model.parameter_count(),
                "best_epoch": history.best_epoch,
                "stopped_epoch": history.stopped_epoch,
                "early_stopped": history.early_stopped,
                "model_checksum": ModelArtifact::from(&model).checksum,
            }),
        )?;
        Ok((model, history))
    }

    fn eval_teacher(&self, dir: &Path, seed: u64, teacher: &TeacherModel, manifest: &mut Manifest) -> Result<()> {
        let accuracy = evaluate(
            teacher.backend.as_ref(),
            &self.spec,
            &teacher.demos,
            &teacher.config,
            &self.data.test,
        )?;
        let result = RunResult {
            task: self.spec.name().to_string(),
            ablation: self.cfg.ablation,
            seed,
            fingerprint: self.cfg.fingerprint(),
            accuracy,
            test_size: self.data.test.len(),
            classifier_dev_accuracy: None,
            teacher_dev_accuracy: Some(teacher.dev_accuracy),
            train_size: 0,
            augmented: 0,
        };
        self.finish(dir, &result, manifest)
    }

    fn finish(&self, dir: &Path, result: &RunResult, manifest: &mut Manifest) -> Result<()> {
        let path = dir.join("result.json");
        persist(&path, |tmp| jsonl::write_json(tmp, result))?;
        log::info!("seed {}: {} accuracy {:.4}", result.seed, result.ablation, result.accuracy);
        manifest.record(
            Stage::Eval,
            json!({ "accuracy": result.accuracy, "test_size": result.test_size }),
        )
    }
}

/// Per-stage summary of a run, rewritten after every stage.
struct Manifest {
    path: PathBuf,
    value: BTreeMap<String, Value>,
}

impl Manifest {
    fn open(dir: &Path, cfg: &RunConfig, seed: u64) -> Result<Self> {
        let mut value = BTreeMap::new();
        value.insert("task".into(), json!(cfg.task));
        value.insert("ablation".into(), json!(cfg.ablation));
        value.insert("seed".into(), json!(seed));
        value.insert("fingerprint".into(), json!(cfg.fingerprint()));
        Ok(Self {
            path: dir.join("manifest.json"),
            value,
        })
    }

    fn record(&mut self, stage: Stage, entry: Value) -> Result<()> {
        self.value.insert(stage.name().into(), entry);
        let path = self.path.clone();
        persist(&path, |tmp| jsonl::write_json(tmp, &self.value))
    }

    fn entry(&self, stage: Stage) -> Result<Value> {
        Ok(self.value.get(stage.name()).cloned().unwrap_or(Value::Null))
    }
}

/// SHA-256 of a file's bytes.
pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
