//! JSON bodies of the encoder and teacher HTTP protocols.
//!
//! Encoder: `POST /encode`, `GET /meta`.
//! Teacher: `POST /train_batch`, `POST /predict`, `POST /save`, `POST /load`.

use serde::{Deserialize, Serialize};

use super::{EncoderRequest, LayerHiddenStates, LayerMode, Position};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub text: String,
    pub position: Position,
    pub layer_mode: LayerMode,
}

impl From<&EncoderRequest> for EncodeRequest {
    fn from(r: &EncoderRequest) -> Self {
        Self {
            text: r.text.clone(),
            position: r.position,
            layer_mode: r.layer_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub d: usize,
    pub layers: Vec<Vec<f64>>,
    pub model_id: String,
}

impl From<EncodeResponse> for LayerHiddenStates {
    fn from(r: EncodeResponse) -> Self {
        Self {
            vectors: r.layers,
            d: r.d,
            model_id: r.model_id,
        }
    }
}

impl From<LayerHiddenStates> for EncodeResponse {
    fn from(s: LayerHiddenStates) -> Self {
        Self {
            d: s.d,
            layers: s.vectors,
            model_id: s.model_id,
        }
    }
}

/// `GET /meta` body; identical to [`super::EncoderMeta`].
pub type MetaResponse = super::EncoderMeta;

fn default_apply() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBatchRequest {
    pub texts: Vec<String>,
    pub gold_words: Vec<String>,
    pub lr: f64,
    /// False while accumulating gradients; absent means true.
    #[serde(default = "default_apply")]
    pub apply: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBatchResponse {
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub texts: Vec<String>,
    pub candidate_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub artifact_id: String,
}
