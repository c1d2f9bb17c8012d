use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{BalanceStrategy, DEFAULT_THRESHOLD};
use crate::backends::mock::{MockEncoderConfig, MockTeacherConfig};
use crate::backends::{LayerMode, Position};
use crate::classifier::MlpConfig;
use crate::error::{Error, Result};
use crate::hashing::sha256_hex;
use crate::prompt::{default_task, load_registry, TaskSpec};
use crate::teacher::{GridSpace, TeacherTrainConfig};

pub const DEFAULT_SEEDS: [u64; 5] = [13, 21, 42, 87, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoAug,
    ClsToken,
    LastLayer,
    TeacherOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoAug,
        Ablation::ClsToken,
        Ablation::LastLayer,
        Ablation::TeacherOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoAug => "no_aug",
            Ablation::ClsToken => "cls_token",
            Ablation::LastLayer => "last_layer",
            Ablation::TeacherOnly => "teacher_only",
        }
    }

    pub fn position(self) -> Position {
        match self {
            Ablation::ClsToken => Position::Cls,
            _ => Position::Mask,
        }
    }

    pub fn layer_mode(self) -> LayerMode {
        match self {
            Ablation::LastLayer => LayerMode::Last1,
            _ => LayerMode::Last4,
        }
    }

    pub fn uses_teacher(self) -> bool {
        self != Ablation::NoAug
    }

    pub fn trains_classifier(self) -> bool {
        self != Ablation::TeacherOnly
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| Error::Validation(format!("unknown ablation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    /// Separate unlabeled text; defaults to the train file with labels stripped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlabeled: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSettings {
    /// Defaults to the encoder width.
    pub hidden_dim: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub normalize_features: bool,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        let base = MlpConfig::new(1, 2);
        Self {
            hidden_dim: None,
            learning_rate: base.learning_rate,
            batch_size: base.batch_size,
            max_epochs: base.max_epochs,
            patience: base.patience,
            normalize_features: base.normalize_features,
        }
    }
}

impl ClassifierSettings {
    pub fn mlp_config(&self, input_dim: usize, num_classes: usize, seed: u64) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden_dim: self.hidden_dim.unwrap_or(input_dim),
            num_classes,
            seed,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            normalize_features: self.normalize_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub encoder_url: Option<String>,
    pub teacher_url: Option<String>,
    /// Checkpoint every grid variant starts from on a remote teacher.
    pub teacher_base_artifact: Option<String>,
    pub fan_out: usize,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            encoder_url: None,
            teacher_url: None,
            teacher_base_artifact: None,
            fan_out: 8,
            timeout_secs: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub encoder: MockEncoderConfig,
    pub teacher: MockTeacherConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: String,
    /// Task registry file; the built-in registry when absent.
    pub registry: Option<PathBuf>,
    pub data: DataConfig,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub ablation: Ablation,
    pub threshold: f64,
    pub balance: BalanceStrategy,
    /// Unlabeled pool size. Defaults to the task's augmentation budget
    /// times `budget_scale`, or unbounded if the task has no budget.
    pub pool_cap: Option<usize>,
    pub budget_scale: f64,
    pub teacher: TeacherTrainConfig,
    pub grid: GridSpace,
    pub classifier: ClassifierSettings,
    pub endpoints: EndpointConfig,
    /// In-process mock backends instead of HTTP endpoints.
    pub mock: Option<MockSettings>,
    pub runs_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: String::new(),
            registry: None,
            data: DataConfig::default(),
            k: 16,
            seeds: DEFAULT_SEEDS.to_vec(),
            ablation: Ablation::Full,
            threshold: DEFAULT_THRESHOLD,
            balance: BalanceStrategy::MinCap,
            pool_cap: None,
            budget_scale: 1.0,
            teacher: TeacherTrainConfig::default(),
            grid: GridSpace::default(),
            classifier: ClassifierSettings::default(),
            endpoints: EndpointConfig::default(),
            mock: None,
            runs_dir: PathBuf::from("runs"),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads a JSON config. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&raw)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.data.train);
        resolve(base, &mut cfg.data.test);
        if let Some(u) = cfg.data.unlabeled.as_mut() {
            resolve(base, u);
        }
        if let Some(r) = cfg.registry.as_mut() {
            resolve(base, r);
        }
        resolve(base, &mut cfg.runs_dir);
        Ok(cfg)
    }

    /// `ENCODER_URL` and `TEACHER_URL` take precedence over the file.
    pub fn apply_env_overrides(&mut self) {
        if let Ok(url) = std::env::var("ENCODER_URL") {
            self.endpoints.encoder_url = Some(url);
        }
        if let Ok(url) = std::env::var("TEACHER_URL") {
            self.endpoints.teacher_url = Some(url);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Validation("seed list is empty".into()));
        }
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Validation("seeds must be distinct".into()));
        }
        if self.k == 0 {
            return Err(Error::Validation("K must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Validation(format!("threshold must lie in [0, 1), got {}", self.threshold)));
        }
        if !(self.budget_scale >= 0.0) {
            return Err(Error::Validation("budget_scale must be non-negative".into()));
        }
        self.teacher.validate()?;
        if self.mock.is_none() {
            if self.endpoints.encoder_url.is_none() && self.ablation.trains_classifier() {
                return Err(Error::Validation("no encoder endpoint configured and mock mode is off".into()));
            }
            if self.endpoints.teacher_url.is_none() && self.ablation.uses_teacher() {
                return Err(Error::Validation("no teacher endpoint configured and mock mode is off".into()));
            }
        }
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        match &self.registry {
            Some(path) => load_registry(path)?
                .remove(&self.task)
                .ok_or_else(|| Error::Validation(format!("task `{}` is not in {}", self.task, path.display()))),
            None => default_task(&self.task),
        }
    }

    pub fn pool_cap(&self, spec: &TaskSpec) -> usize {
        match (self.pool_cap, spec.augment_budget()) {
            (Some(cap), _) => cap,
            (None, Some(budget)) => (budget as f64 * self.budget_scale).round() as usize,
            (None, None) => usize::MAX,
        }
    }

    /// Digest of everything that determines a run's outputs apart from the
    /// seed. Endpoints and the runs directory are transport, not inputs.
    /// Identifies the experiment: everything that can change a result.
    /// Seeds, the runs directory and endpoints are left out, and input
    /// files count by content, so moving the data keeps the fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("seeds");
            map.remove("runs_dir");
            map.remove("endpoints");
            map.insert(
                "data".into(),
                serde_json::json!({
                    "train": content_id(&self.data.train),
                    "test": content_id(&self.data.test),
                    "unlabeled": self.data.unlabeled.as_deref().map(content_id),
                }),
            );
            map.insert("registry".into(), self.registry.as_deref().map(content_id).into());
        }
        sha256_hex(value.to_string().as_bytes())[..16].to_string()
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.runs_dir.join(self.fingerprint()).join(seed.to_string())
    }
}

/// SHA-256 of a file's bytes, or its path when it cannot be read.
fn content_id(path: &Path) -> String {
    match std::fs::read(path) {
        Ok(bytes) => sha256_hex(&bytes),
        Err(_) => path.display().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.as_str()));
        }
        assert_eq!("NO-AUG".parse::<Ablation>().unwrap(), Ablation::NoAug);
        assert!("nope".parse::<Ablation>().is_err());
    }

    #[test]
    fn ablation_flags() {
        assert_eq!(Ablation::ClsToken.position(), Position::Cls);
        assert_eq!(Ablation::LastLayer.layer_mode(), LayerMode::Last1);
        assert_eq!(Ablation::Full.position(), Position::Mask);
        assert_eq!(Ablation::Full.layer_mode(), LayerMode::Last4);
        assert!(!Ablation::NoAug.uses_teacher());
        assert!(!Ablation::TeacherOnly.trains_classifier());
    }

    #[test]
    fn seeds_must_be_distinct_and_present() {
        let mut cfg = RunConfig {
            task: "sst-2".into(),
            mock: Some(MockSettings::default()),
            ..RunConfig::default()
        };
        cfg.validate().unwrap();
        cfg.seeds = vec![1, 1];
        assert!(cfg.validate().is_err());
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_ignores_seeds_and_transport() {
        let a = RunConfig {
            task: "sst-2".into(),
            ..RunConfig::default()
        };
        let mut b = a.clone();
        b.seeds = vec![7];
        b.runs_dir = "elsewhere".into();
        b.endpoints.encoder_url = Some("http://x".into());
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.ablation = Ablation::NoAug;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn fingerprint_follows_data_content_not_location() {
        let dir = std::env::temp_dir().join(format!("btc-fp-{}", std::process::id()));
        std::fs::create_dir_all(dir.join("moved")).unwrap();
        for name in ["train.jsonl", "moved/train.jsonl"] {
            std::fs::write(dir.join(name), "{\"text_a\":\"x\",\"label\":\"positive\"}\n").unwrap();
        }
        let mut a = RunConfig {
            task: "sst-2".into(),
            ..RunConfig::default()
        };
        a.data.train = dir.join("train.jsonl");
        let mut b = a.clone();
        b.data.train = dir.join("moved/train.jsonl");
        assert_eq!(a.fingerprint(), b.fingerprint());
        std::fs::write(&b.data.train, "{\"text_a\":\"y\",\"label\":\"positive\"}\n").unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn pool_cap_follows_budget() {
        let spec = default_task("agnews").unwrap();
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.pool_cap(&spec), 8900);
        cfg.budget_scale = 0.5;
        assert_eq!(cfg.pool_cap(&spec), 4450);
        cfg.pool_cap = Some(10);
        assert_eq!(cfg.pool_cap(&spec), 10);
    }

    #[test]
    fn relative_paths_resolve_against_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"task":"sst-2","data":{"train":"t.jsonl","test":"/abs/x.jsonl"}}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.data.train, dir.path().join("t.jsonl"));
        assert_eq!(cfg.data.test, PathBuf::from("/abs/x.jsonl"));
        assert_eq!(cfg.runs_dir, dir.path().join("runs"));
        assert_eq!(cfg.k, 16);
        assert_eq!(cfg.seeds.len(), 5);
    }
}
