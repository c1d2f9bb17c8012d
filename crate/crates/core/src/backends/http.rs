//! Blocking HTTP clients for the encoder and teacher protocols.

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    ArtifactRef, EncodeRequest, EncodeResponse, MetaResponse, PredictRequest, PredictResponse, TrainBatchRequest,
    TrainBatchResponse,
};
use super::{Encoder, EncoderMeta, EncoderRequest, LayerHiddenStates, TeacherBackend};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

fn build_client(timeout: Duration) -> Result<Client> {
    Client::builder().timeout(timeout).build().map_err(|e| Error::Backend {
        retryable: false,
        message: format!("could not build HTTP client: {e}"),
    })
}

fn transport_error(url: &str, e: reqwest::Error) -> Error {
    Error::Backend {
        retryable: e.is_connect() || e.is_timeout() || e.is_request(),
        message: format!("{url}: {e}"),
    }
}

fn decode<T: DeserializeOwned>(url: &str, resp: Response) -> Result<T> {
    let status = resp.status();
    if status.is_server_error() {
        return Err(Error::Backend {
            retryable: true,
            message: format!("{url}: HTTP {status}"),
        });
    }
    if !status.is_success() {
        let body = resp.text().unwrap_or_default();
        return Err(Error::Request(format!("{url}: HTTP {status}: {body}")));
    }
    resp.json::<T>().map_err(|e| Error::Contract(format!("{url}: malformed response: {e}")))
}

#[derive(Debug, Clone)]
struct Endpoint {
    base: String,
    client: Client,
    retry: RetryPolicy,
}

impl Endpoint {
    fn new(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self> {
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            client: build_client(timeout)?,
            retry,
        })
    }

    fn with_retry<T>(&self, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 1;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    log::warn!("attempt {attempt} failed: {e}; retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| transport_error(&url, e))?;
        decode(&url, resp)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let resp = self.client.get(&url).send().map_err(|e| transport_error(&url, e))?;
        decode(&url, resp)
    }
}

/// Client for a remote black-box encoder.
#[derive(Debug, Clone)]
pub struct HttpEncoder {
    endpoint: Endpoint,
}

impl HttpEncoder {
    pub fn new(base_url: &str) -> Result<Self> {
        Self::with_policy(base_url, Duration::from_secs(120), RetryPolicy::default())
    }

    pub fn with_policy(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self> {
        Ok(Self {
            endpoint: Endpoint::new(base_url, timeout, retry)?,
        })
    }
}

impl Encoder for HttpEncoder {
    fn meta(&self) -> Result<EncoderMeta> {
        self.endpoint.with_retry(|| self.endpoint.get::<MetaResponse>("/meta"))
    }

    fn encode(&self, request: &EncoderRequest) -> Result<LayerHiddenStates> {
        request.validate()?;
        let body = EncodeRequest::from(request);
        let resp: EncodeResponse = self.endpoint.with_retry(|| self.endpoint.post("/encode", &body))?;
        Ok(resp.into())
    }
}

/// Client for a remote teacher. Training calls are not retried since they
/// mutate server state.
#[derive(Debug, Clone)]
pub struct HttpTeacher {
    endpoint: Endpoint,
}

impl HttpTeacher {
    pub fn new(base_url: &str) -> Result<Self> {
        Self::with_policy(base_url, Duration::from_secs(600), RetryPolicy::default())
    }

    pub fn with_policy(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self> {
        Ok(Self {
            endpoint: Endpoint::new(base_url, timeout, retry)?,
        })
    }
}

impl TeacherBackend for HttpTeacher {
    fn train_batch(&mut self, texts: &[String], gold_words: &[String], lr: f64, apply_update: bool) -> Result<f64> {
        let body = TrainBatchRequest {
            texts: texts.to_vec(),
            gold_words: gold_words.to_vec(),
            lr,
            apply: apply_update,
        };
        let resp: TrainBatchResponse = self.endpoint.post("/train_batch", &body)?;
        Ok(resp.loss)
    }

    fn predict(&self, texts: &[String], candidate_words: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = PredictRequest {
            texts: texts.to_vec(),
            candidate_words: candidate_words.to_vec(),
        };
        let resp: PredictResponse = self.endpoint.with_retry(|| self.endpoint.post("/predict", &body))?;
        if resp.logits.len() != texts.len() || resp.logits.iter().any(|row| row.len() != candidate_words.len()) {
            return Err(Error::Contract("predict response shape does not match the request".into()));
        }
        Ok(resp.logits)
    }

    fn save(&self) -> Result<String> {
        let resp: ArtifactRef = self.endpoint.post("/save", &serde_json::json!({}))?;
        Ok(resp.artifact_id)
    }

    fn load(&mut self, artifact_id: &str) -> Result<()> {
        let _: serde_json::Value = self.endpoint.post(
            "/load",
            &ArtifactRef {
                artifact_id: artifact_id.to_string(),
            },
        )?;
        Ok(())
    }
}
