use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{MlpConfig, MlpModel};
use crate::error::{Error, Result};
use crate::jsonl;

const FORMAT: &str = "bt-classifier-mlp";
const VERSION: u32 = 1;

/// Serialized MLP: config plus flat row-major parameter arrays and a
/// SHA-256 over their little-endian bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub config: MlpConfig,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub checksum: String,
}

fn checksum(parts: [&[f64]; 4]) -> String {
    let bytes: Vec<u8> = parts.iter().flat_map(|p| p.iter()).flat_map(|x| x.to_le_bytes()).collect();
    crate::hashing::sha256_hex(&bytes)
}

impl From<&MlpModel> for ModelArtifact {
    fn from(m: &MlpModel) -> Self {
        let w1: Vec<f64> = m.w1.iter().copied().collect();
        let b1 = m.b1.to_vec();
        let w2: Vec<f64> = m.w2.iter().copied().collect();
        let b2 = m.b2.to_vec();
        let checksum = checksum([&w1, &b1, &w2, &b2]);
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config: m.config.clone(),
            w1,
            b1,
            w2,
            b2,
            checksum,
        }
    }
}

impl TryFrom<ModelArtifact> for MlpModel {
    type Error = Error;

    fn try_from(a: ModelArtifact) -> Result<Self> {
        if a.format != FORMAT || a.version != VERSION {
            return Err(Error::Validation(format!(
                "unsupported model artifact {} v{}",
                a.format, a.version
            )));
        }
        a.config.validate()?;
        let cfg = &a.config;
        let stored = a.w1.len() + a.b1.len() + a.w2.len() + a.b2.len();
        if stored != cfg.parameter_count()
            || a.w1.len() != cfg.hidden_dim * cfg.input_dim
            || a.b1.len() != cfg.hidden_dim
            || a.w2.len() != cfg.num_classes * cfg.hidden_dim
            || a.b2.len() != cfg.num_classes
        {
            return Err(Error::Validation(format!(
                "model artifact holds {stored} parameters, config implies {}",
                cfg.parameter_count()
            )));
        }
        if checksum([&a.w1, &a.b1, &a.w2, &a.b2]) != a.checksum {
            return Err(Error::Validation("model artifact checksum mismatch".into()));
        }
        let model = MlpModel {
            w1: Array2::from_shape_vec((cfg.hidden_dim, cfg.input_dim), a.w1).expect("length checked"),
            b1: Array1::from(a.b1),
            w2: Array2::from_shape_vec((cfg.num_classes, cfg.hidden_dim), a.w2).expect("length checked"),
            b2: Array1::from(a.b2),
            config: a.config,
        };
        if !model.is_finite() {
            return Err(Error::Validation("model artifact contains non-finite parameters".into()));
        }
        Ok(model)
    }
}

pub fn save_model(path: &Path, model: &MlpModel) -> Result<()> {
    jsonl::write_json(path, &ModelArtifact::from(model))
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    jsonl::read_json::<ModelArtifact>(path)?.try_into()
}
