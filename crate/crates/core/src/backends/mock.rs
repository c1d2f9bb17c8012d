//! Deterministic in-process backends for desk-scale runs and tests.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderMeta, EncoderRequest, LayerHiddenStates, LayerMode, Position, TeacherBackend};
use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::hashing::{hash_hex, hash_u64, sha256_hex};
use crate::prompt::{apply_template, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockEncoderConfig {
    pub d: usize,
    pub num_layers: usize,
    pub model_id: String,
    /// Standard deviation of the per-layer Gaussian noise in planted mode.
    pub noise: f64,
    /// Multiplier on the planted direction for `cls` requests.
    pub cls_signal_scale: f64,
    pub direction_seed: u64,
}

impl Default for MockEncoderConfig {
    fn default() -> Self {
        Self {
            d: 16,
            num_layers: 6,
            model_id: "mock-encoder".into(),
            noise: 0.1,
            cls_signal_scale: 0.5,
            direction_seed: 0,
        }
    }
}

/// Seeded Gaussian directions, normalized to unit length.
pub fn random_directions(labels: &[String], d: usize, seed: u64) -> BTreeMap<String, Vec<f64>> {
    labels
        .iter()
        .map(|label| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(hash_u64([b"direction".as_slice(), &seed.to_le_bytes(), label.as_bytes()]));
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (label.clone(), v.into_iter().map(|x| x / norm).collect())
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
struct PlantedSignal {
    directions: BTreeMap<String, Vec<f64>>,
    /// Hash of a rendered input -> its hidden label. Never exposed to the pipeline.
    oracle: HashMap<String, String>,
}

/// Mock encoder.
///
/// Texts without an oracle entry map to pure hash noise (unit-variance
/// Gaussian per coordinate). Texts registered in planted mode map to their
/// label's direction plus `noise`-scaled Gaussian noise, drawn independently
/// per layer.
pub struct MockEncoder {
    config: MockEncoderConfig,
    planted: Option<PlantedSignal>,
    requests: Mutex<BTreeMap<(Position, LayerMode), usize>>,
}

impl MockEncoder {
    pub fn hashed(config: MockEncoderConfig) -> Result<Self> {
        if config.d == 0 || config.num_layers < 4 {
            return Err(Error::Validation("mock encoder needs d > 0 and at least 4 layers".into()));
        }
        Ok(Self {
            config,
            planted: None,
            requests: Mutex::new(BTreeMap::new()),
        })
    }

    /// Planted mode with seeded random directions; every example in
    /// `examples` is rendered through `spec` and registered with its label.
    pub fn planted(config: MockEncoderConfig, spec: &TaskSpec, examples: &[LabeledExample]) -> Result<Self> {
        let directions = random_directions(spec.label_space(), config.d, config.direction_seed);
        let mut encoder = Self::with_directions(config, directions)?;
        for example in examples {
            let prompt = apply_template(spec, example)?;
            encoder.register(&prompt.rendered, &example.label);
        }
        Ok(encoder)
    }

    pub fn with_directions(config: MockEncoderConfig, directions: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if directions.values().any(|v| v.len() != config.d) {
            return Err(Error::Validation("planted direction length differs from d".into()));
        }
        let mut encoder = Self::hashed(config)?;
        encoder.planted = Some(PlantedSignal {
            directions,
            oracle: HashMap::new(),
        });
        Ok(encoder)
    }

    /// Registers the hidden label of a rendered text.
    pub fn register(&mut self, rendered_text: &str, label: &str) {
        if let Some(planted) = self.planted.as_mut() {
            planted
                .oracle
                .insert(hash_hex([rendered_text.as_bytes()]), label.to_string());
        }
    }

    pub fn direction(&self, label: &str) -> Option<&[f64]> {
        self.planted.as_ref()?.directions.get(label).map(Vec::as_slice)
    }

    pub fn config(&self) -> &MockEncoderConfig {
        &self.config
    }

    /// Number of `encode` calls per (position, layer mode).
    pub fn request_counts(&self) -> BTreeMap<(Position, LayerMode), usize> {
        self.requests.lock().expect("request log poisoned").clone()
    }

    fn signal(&self, text: &str, position: Position) -> Option<Vec<f64>> {
        let planted = self.planted.as_ref()?;
        let label = planted.oracle.get(&hash_hex([text.as_bytes()]))?;
        let direction = planted.directions.get(label)?;
        let scale = match position {
            Position::Mask => 1.0,
            Position::Cls => self.config.cls_signal_scale,
        };
        Some(direction.iter().map(|x| x * scale).collect())
    }
}

impl Encoder for MockEncoder {
    fn meta(&self) -> Result<EncoderMeta> {
        Ok(EncoderMeta {
            d: self.config.d,
            num_layers: self.config.num_layers,
            model_id: self.config.model_id.clone(),
        })
    }

    fn encode(&self, request: &EncoderRequest) -> Result<LayerHiddenStates> {
        request.validate()?;
        *self
            .requests
            .lock()
            .expect("request log poisoned")
            .entry((request.position, request.layer_mode))
            .or_default() += 1;

        let signal = self.signal(&request.text, request.position);
        let vectors = request
            .layer_mode
            .layer_indices(self.config.num_layers)
            .map(|layer| {
                let mut rng = ChaCha8Rng::seed_from_u64(hash_u64([
                    self.config.model_id.as_bytes(),
                    request.text.as_bytes(),
                    request.position.as_str().as_bytes(),
                    &(layer as u64).to_le_bytes(),
                ]));
                let mut z = (0..self.config.d).map(|_| -> f64 { StandardNormal.sample(&mut rng) });
                match &signal {
                    Some(s) => s.iter().map(|x| x + self.config.noise * z.next().unwrap()).collect(),
                    None => z.collect(),
                }
            })
            .collect();
        Ok(LayerHiddenStates {
            vectors,
            d: self.config.d,
            model_id: self.config.model_id.clone(),
        })
    }
}

/// Where mock teacher checkpoints live.
#[derive(Debug, Clone)]
pub enum ArtifactStore {
    Memory(Arc<Mutex<HashMap<String, Vec<u8>>>>),
    Dir(PathBuf),
}

impl Default for ArtifactStore {
    fn default() -> Self {
        ArtifactStore::Memory(Arc::default())
    }
}

impl ArtifactStore {
    fn put(&self, id: &str, bytes: Vec<u8>) -> Result<()> {
        match self {
            ArtifactStore::Memory(map) => {
                map.lock().expect("artifact store poisoned").insert(id.to_string(), bytes);
                Ok(())
            }
            ArtifactStore::Dir(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(format!("{id}.json"));
                std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
            }
        }
    }

    fn get(&self, id: &str) -> Result<Vec<u8>> {
        let missing = || Error::Request(format!("unknown teacher artifact `{id}`"));
        match self {
            ArtifactStore::Memory(map) => map.lock().expect("artifact store poisoned").get(id).cloned().ok_or_else(missing),
            ArtifactStore::Dir(dir) => {
                if id.contains(['/', '\\']) || id.contains("..") {
                    return Err(missing());
                }
                std::fs::read(dir.join(format!("{id}.json"))).map_err(|_| missing())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockTeacherConfig {
    /// Output vocabulary of the masked-word head. Training normalizes over
    /// all of it.
    pub vocab: Vec<String>,
    pub feature_dim: usize,
    /// Multiplies requested learning rates, so that teacher-scale rates
    /// (around 1e-5) move a linear model.
    pub lr_scale: f64,
}

impl Default for MockTeacherConfig {
    fn default() -> Self {
        Self {
            vocab: Vec::new(),
            feature_dim: 1024,
            lr_scale: 1e5,
        }
    }
}

impl MockTeacherConfig {
    /// The task's label words plus a few distractor words.
    pub fn for_task(spec: &TaskSpec, base: &MockTeacherConfig) -> Self {
        let mut vocab = spec.label_words();
        for extra in base.vocab.iter().map(String::as_str).chain(["the", "a", "it"]) {
            if !vocab.iter().any(|w| w == extra) {
                vocab.push(extra.to_string());
            }
        }
        Self {
            vocab,
            feature_dim: base.feature_dim,
            lr_scale: base.lr_scale,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TeacherState {
    vocab: Vec<String>,
    feature_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

type SparseFeatures = Arc<Vec<(usize, f64)>>;

/// Mock teacher: multinomial logistic regression over L2-normalized hashed
/// bag-of-token counts, predicting a vocabulary word for the mask slot.
pub struct MockTeacher {
    config: MockTeacherConfig,
    weights: Vec<f64>,
    bias: Vec<f64>,
    grad_weights: Vec<f64>,
    grad_bias: Vec<f64>,
    accumulated: usize,
    step_count: usize,
    update_count: usize,
    store: ArtifactStore,
    memo: Mutex<HashMap<String, SparseFeatures>>,
}

impl MockTeacher {
    pub fn new(config: MockTeacherConfig, store: ArtifactStore) -> Result<Self> {
        if config.vocab.len() < 2 || config.feature_dim == 0 || !(config.lr_scale > 0.0) {
            return Err(Error::Validation(
                "mock teacher needs >= 2 vocab words, feature_dim > 0 and lr_scale > 0".into(),
            ));
        }
        let n = config.vocab.len() * config.feature_dim;
        Ok(Self {
            weights: vec![0.0; n],
            bias: vec![0.0; config.vocab.len()],
            grad_weights: vec![0.0; n],
            grad_bias: vec![0.0; config.vocab.len()],
            accumulated: 0,
            step_count: 0,
            update_count: 0,
            store,
            memo: Mutex::new(HashMap::new()),
            config,
        })
    }

    /// Micro-batches seen by `train_batch`.
    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Parameter updates applied.
    pub fn update_count(&self) -> usize {
        self.update_count
    }

    fn features(&self, text: &str) -> SparseFeatures {
        if let Some(f) = self.memo.lock().expect("memo poisoned").get(text) {
            return f.clone();
        }
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for token in text.split_whitespace() {
            let token = token.to_lowercase();
            let bucket = (hash_u64([b"tok".as_slice(), token.as_bytes()]) % self.config.feature_dim as u64) as usize;
            *counts.entry(bucket).or_default() += 1.0;
        }
        let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt().max(1.0);
        let features: SparseFeatures = Arc::new(counts.into_iter().map(|(i, c)| (i, c / norm)).collect());
        self.memo
            .lock()
            .expect("memo poisoned")
            .insert(text.to_string(), features.clone());
        features
    }

    fn word_index(&self, word: &str) -> Result<usize> {
        self.config
            .vocab
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| Error::Request(format!("word `{word}` is not in the teacher vocabulary")))
    }

    fn logit(&self, row: usize, x: &[(usize, f64)]) -> f64 {
        let base = row * self.config.feature_dim;
        self.bias[row] + x.iter().map(|&(j, v)| self.weights[base + j] * v).sum::<f64>()
    }
}

impl TeacherBackend for MockTeacher {
    fn train_batch(&mut self, texts: &[String], gold_words: &[String], lr: f64, apply_update: bool) -> Result<f64> {
        if texts.len() != gold_words.len() || texts.is_empty() {
            return Err(Error::Request("texts and gold_words must be non-empty and of equal length".into()));
        }
        if !(lr > 0.0) {
            return Err(Error::Request(format!("learning rate must be positive, got {lr}")));
        }
        let vocab = self.config.vocab.len();
        let dim = self.config.feature_dim;
        let mut loss = 0.0;
        for (text, gold) in texts.iter().zip(gold_words) {
            let gold = self.word_index(gold)?;
            let x = self.features(text);
            let logits: Vec<f64> = (0..vocab).map(|v| self.logit(v, &x)).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            loss += z.ln() + max - logits[gold];
            for v in 0..vocab {
                let err = exps[v] / z - if v == gold { 1.0 } else { 0.0 };
                self.grad_bias[v] += err;
                for &(j, val) in x.iter() {
                    self.grad_weights[v * dim + j] += err * val;
                }
            }
        }
        self.accumulated += texts.len();
        self.step_count += 1;

        if apply_update {
            let step = lr * self.config.lr_scale / self.accumulated as f64;
            for (w, g) in self.weights.iter_mut().zip(self.grad_weights.iter_mut()) {
                *w -= step * *g;
                *g = 0.0;
            }
            for (b, g) in self.bias.iter_mut().zip(self.grad_bias.iter_mut()) {
                *b -= step * *g;
                *g = 0.0;
            }
            self.accumulated = 0;
            self.update_count += 1;
        }
        Ok(loss / texts.len() as f64)
    }

    fn predict(&self, texts: &[String], candidate_words: &[String]) -> Result<Vec<Vec<f64>>> {
        let rows = candidate_words
            .iter()
            .map(|w| self.word_index(w))
            .collect::<Result<Vec<_>>>()?;
        Ok(texts
            .iter()
            .map(|t| {
                let x = self.features(t);
                rows.iter().map(|&r| self.logit(r, &x)).collect()
            })
            .collect())
    }

    fn save(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&TeacherState {
            vocab: self.config.vocab.clone(),
            feature_dim: self.config.feature_dim,
            weights: self.weights.clone(),
            bias: self.bias.clone(),
        })?;
        let id = format!("mock-teacher-{}", &sha256_hex(&bytes)[..16]);
        self.store.put(&id, bytes)?;
        Ok(id)
    }

    fn load(&mut self, artifact_id: &str) -> Result<()> {
        let state: TeacherState = serde_json::from_slice(&self.store.get(artifact_id)?)?;
        if state.vocab != self.config.vocab
            || state.feature_dim != self.config.feature_dim
            || state.weights.len() != self.weights.len()
            || state.bias.len() != self.bias.len()
        {
            return Err(Error::Contract(format!(
                "artifact `{artifact_id}` does not match this teacher's vocabulary or feature size"
            )));
        }
        self.weights = state.weights;
        self.bias = state.bias;
        self.grad_weights.iter_mut().for_each(|g| *g = 0.0);
        self.grad_bias.iter_mut().for_each(|g| *g = 0.0);
        self.accumulated = 0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::default_task;

    fn teacher() -> MockTeacher {
        let cfg = MockTeacherConfig::for_task(&default_task("sst-2").unwrap(), &MockTeacherConfig::default());
        MockTeacher::new(cfg, ArtifactStore::default()).unwrap()
    }

    #[test]
    fn hashed_mode_shapes_and_determinism() {
        let enc = MockEncoder::hashed(MockEncoderConfig {
            d: 8,
            ..Default::default()
        })
        .unwrap();
        let req = EncoderRequest::new("good . It was [MASK] .", Position::Mask, LayerMode::Last4).unwrap();
        let a = enc.encode(&req).unwrap();
        assert_eq!(a.vectors.len(), 4);
        assert!(a.vectors.iter().all(|v| v.len() == 8));
        assert_eq!(a, enc.encode(&req).unwrap());

        let last1 = EncoderRequest::new("good . It was [MASK] .", Position::Mask, LayerMode::Last1).unwrap();
        let b = enc.encode(&last1).unwrap();
        assert_eq!(b.vectors.len(), 1);
        // The single LAST1 vector is the top layer of the LAST4 response.
        assert_eq!(b.vectors[0], a.vectors[3]);
        assert_eq!(enc.request_counts()[&(Position::Mask, LayerMode::Last4)], 2);
    }

    #[test]
    fn noise_free_planted_feature_is_the_direction() {
        let spec = default_task("sst-2").unwrap();
        let example = LabeledExample::single("a fine film", "positive");
        let enc = MockEncoder::planted(
            MockEncoderConfig {
                noise: 0.0,
                ..Default::default()
            },
            &spec,
            &[example.clone()],
        )
        .unwrap();
        let text = apply_template(&spec, &example).unwrap().rendered;
        let states = enc
            .encode(&EncoderRequest::new(text, Position::Mask, LayerMode::Last4).unwrap())
            .unwrap();
        let pooled = super::super::max_pool(&states.vectors).unwrap();
        assert_eq!(pooled, enc.direction("positive").unwrap());
    }

    #[test]
    fn mock_teacher_starts_uniform() {
        let t = teacher();
        let logits = t.predict(&["anything".into()], &["bad".into(), "great".into()]).unwrap();
        assert_eq!(logits, vec![vec![0.0, 0.0]]);
        assert!(matches!(t.predict(&["x".into()], &["nope".into()]), Err(Error::Request(_))));
    }

    #[test]
    fn loss_on_a_fixed_batch_does_not_increase() {
        let mut t = teacher();
        let texts: Vec<String> = vec!["a wonderful film".into(), "a dreadful mess".into(), "wonderful acting".into()];
        let gold: Vec<String> = vec!["great".into(), "bad".into(), "great".into()];
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let loss = t.train_batch(&texts, &gold, 1e-5, true).unwrap();
            assert!(loss <= prev + 1e-12, "loss rose from {prev} to {loss}");
            prev = loss;
        }
        assert!(prev < (t.config.vocab.len() as f64).ln());
    }

    #[test]
    fn accumulation_defers_updates() {
        let mut t = teacher();
        let texts: Vec<String> = vec!["x".into()];
        let gold: Vec<String> = vec!["great".into()];
        t.train_batch(&texts, &gold, 1e-5, false).unwrap();
        assert_eq!((t.step_count(), t.update_count()), (1, 0));
        assert_eq!(t.predict(&texts, &gold).unwrap(), vec![vec![0.0]]);
        t.train_batch(&texts, &gold, 1e-5, true).unwrap();
        assert_eq!((t.step_count(), t.update_count()), (2, 1));
        assert!(t.predict(&texts, &gold).unwrap()[0][0] > 0.0);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MockTeacherConfig::for_task(&default_task("sst-2").unwrap(), &MockTeacherConfig::default());
        let mut a = MockTeacher::new(cfg.clone(), ArtifactStore::Dir(dir.path().to_path_buf())).unwrap();
        a.train_batch(&["nice".into()], &["great".into()], 1e-5, true).unwrap();
        let id = a.save().unwrap();

        let mut b = MockTeacher::new(cfg, ArtifactStore::Dir(dir.path().to_path_buf())).unwrap();
        b.load(&id).unwrap();
        let words: Vec<String> = vec!["bad".into(), "great".into()];
        let probe: Vec<String> = vec!["nice".into()];
        assert_eq!(a.predict(&probe, &words).unwrap(), b.predict(&probe, &words).unwrap());
        assert!(b.load("missing").is_err());
    }
}
