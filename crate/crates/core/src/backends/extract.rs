use rayon::prelude::*;

use super::{pool_features, Encoder, EncoderMeta, EncoderRequest, FeatureCache, FeatureVector, LayerMode, Position};
use crate::error::{Error, Result};

/// Encoder client with handshake, bounded fan-out and an optional cache.
pub struct FeatureExtractor<'a> {
    encoder: &'a dyn Encoder,
    cache: Option<&'a FeatureCache>,
    meta: EncoderMeta,
    pool: rayon::ThreadPool,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(encoder: &'a dyn Encoder, cache: Option<&'a FeatureCache>, fan_out: usize) -> Result<Self> {
        let meta = encoder.meta()?;
        if meta.d == 0 || meta.num_layers == 0 {
            return Err(Error::Contract(format!(
                "encoder handshake reported d={} num_layers={}",
                meta.d, meta.num_layers
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(fan_out.max(1))
            .build()
            .map_err(|e| Error::Backend {
                retryable: false,
                message: format!("could not start encoder workers: {e}"),
            })?;
        Ok(Self {
            encoder,
            cache,
            meta,
            pool,
        })
    }

    pub fn meta(&self) -> &EncoderMeta {
        &self.meta
    }

    pub fn extract_one(&self, text: &str, position: Position, layer_mode: LayerMode) -> Result<FeatureVector> {
        let request = EncoderRequest::new(text, position, layer_mode)?;
        if layer_mode.layer_count() > self.meta.num_layers {
            return Err(Error::Contract(format!(
                "{} needs {} layers, encoder has {}",
                layer_mode.as_str(),
                layer_mode.layer_count(),
                self.meta.num_layers
            )));
        }
        let key = request.cache_key(&self.meta.model_id);
        if let Some(values) = self.cache.and_then(|c| c.get(&key)) {
            if values.len() == self.meta.d {
                return Ok(FeatureVector {
                    values,
                    provenance: super::FeatureProvenance {
                        position,
                        layer_mode,
                        model_id: self.meta.model_id.clone(),
                    },
                });
            }
            log::warn!("cached vector for {key} has wrong dimension, recomputing");
        }
        let states = self.encoder.encode(&request)?;
        states.check(&request, self.meta.d)?;
        let feature = pool_features(&states, position, layer_mode)?;
        if let Some(cache) = self.cache {
            cache.put(&key, &feature.values)?;
        }
        Ok(feature)
    }

    /// Extracts features for every text; output order matches input order.
    pub fn extract(&self, texts: &[String], position: Position, layer_mode: LayerMode) -> Result<Vec<FeatureVector>> {
        self.pool.install(|| {
            texts
                .par_iter()
                .map(|t| self.extract_one(t, position, layer_mode))
                .collect()
        })
    }
}
