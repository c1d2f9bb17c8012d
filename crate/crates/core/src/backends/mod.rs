//! Contracts for the black-box encoder and the trainable teacher, plus
//! in-process mocks and HTTP clients that speak the JSON wire protocol.

mod cache;
mod extract;
pub mod http;
pub mod mock;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::hash_hex;
use crate::prompt::count_masks;

pub use cache::FeatureCache;
pub use extract::FeatureExtractor;

/// Token position whose hidden states are requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Mask,
    Cls,
}

/// `Last4` is layers L-3..=L, `Last1` is layer L alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerMode {
    Last4,
    Last1,
}

impl LayerMode {
    pub fn layer_count(self) -> usize {
        match self {
            LayerMode::Last4 => 4,
            LayerMode::Last1 => 1,
        }
    }

    /// 1-based layer indices for a model with `num_layers` layers.
    pub fn layer_indices(self, num_layers: usize) -> std::ops::RangeInclusive<usize> {
        let n = self.layer_count();
        (num_layers + 1).saturating_sub(n)..=num_layers
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerMode::Last4 => "last4",
            LayerMode::Last1 => "last1",
        }
    }
}

impl Position {
    pub fn as_str(self) -> &'static str {
        match self {
            Position::Mask => "mask",
            Position::Cls => "cls",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderRequest {
    pub text: String,
    pub position: Position,
    pub layer_mode: LayerMode,
}

impl EncoderRequest {
    pub fn new(text: impl Into<String>, position: Position, layer_mode: LayerMode) -> Result<Self> {
        let request = Self {
            text: text.into(),
            position,
            layer_mode,
        };
        request.validate()?;
        Ok(request)
    }

    pub fn validate(&self) -> Result<()> {
        if self.position == Position::Mask {
            let masks = count_masks(&self.text);
            if masks != 1 {
                return Err(Error::Request(format!(
                    "mask position requested but text has {masks} unresolved mask slots"
                )));
            }
        }
        Ok(())
    }

    /// Content-addressed cache key for this request against `model_id`.
    pub fn cache_key(&self, model_id: &str) -> String {
        hash_hex([
            self.text.as_bytes(),
            self.position.as_str().as_bytes(),
            self.layer_mode.as_str().as_bytes(),
            model_id.as_bytes(),
        ])
    }
}

/// Handshake returned by `GET /meta`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderMeta {
    pub d: usize,
    pub num_layers: usize,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHiddenStates {
    pub vectors: Vec<Vec<f64>>,
    pub d: usize,
    pub model_id: String,
}

impl LayerHiddenStates {
    /// Checks the shape contract for a response to `request`.
    pub fn check(&self, request: &EncoderRequest, expected_d: usize) -> Result<()> {
        let want = request.layer_mode.layer_count();
        if self.vectors.len() != want {
            return Err(Error::Contract(format!(
                "{} requested, backend returned {} layer vectors",
                request.layer_mode.as_str(),
                self.vectors.len()
            )));
        }
        if self.d != expected_d {
            return Err(Error::Contract(format!(
                "backend reported d={} but handshake said d={expected_d}",
                self.d
            )));
        }
        if let Some(bad) = self.vectors.iter().find(|v| v.len() != self.d) {
            return Err(Error::Contract(format!(
                "layer vector of length {} does not match d={}",
                bad.len(),
                self.d
            )));
        }
        if self.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Contract("non-finite hidden state".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureProvenance {
    pub position: Position,
    pub layer_mode: LayerMode,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub provenance: FeatureProvenance,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Element-wise maximum over the layer vectors.
pub fn max_pool(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let (first, rest) = vectors
        .split_first()
        .ok_or_else(|| Error::Contract("cannot pool an empty layer list".into()))?;
    let mut pooled = first.clone();
    for v in rest {
        if v.len() != pooled.len() {
            return Err(Error::Contract("layer vectors differ in dimension".into()));
        }
        for (p, &x) in pooled.iter_mut().zip(v) {
            *p = p.max(x);
        }
    }
    Ok(pooled)
}

pub fn pool_features(states: &LayerHiddenStates, position: Position, layer_mode: LayerMode) -> Result<FeatureVector> {
    Ok(FeatureVector {
        values: max_pool(&states.vectors)?,
        provenance: FeatureProvenance {
            position,
            layer_mode,
            model_id: states.model_id.clone(),
        },
    })
}

/// The black-box feature extractor: inference only.
pub trait Encoder: Send + Sync {
    fn meta(&self) -> Result<EncoderMeta>;

    fn encode(&self, request: &EncoderRequest) -> Result<LayerHiddenStates>;
}

/// A prompt-finetunable masked language model.
///
/// `train_batch` accumulates the gradient of the masked-word loss for one
/// micro-batch and, when `apply_update` is set, applies the averaged
/// accumulated gradient with learning rate `lr`. Returns the micro-batch loss.
pub trait TeacherBackend: Send + Sync {
    fn train_batch(&mut self, texts: &[String], gold_words: &[String], lr: f64, apply_update: bool) -> Result<f64>;

    /// Mask-position logits for each text over `candidate_words`.
    fn predict(&self, texts: &[String], candidate_words: &[String]) -> Result<Vec<Vec<f64>>>;

    /// Persists the current weights; returns an opaque artifact id.
    fn save(&self) -> Result<String>;

    fn load(&mut self, artifact_id: &str) -> Result<()>;
}
