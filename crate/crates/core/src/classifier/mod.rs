//! Two-layer tanh MLP head trained with cross-entropy on pooled features.

mod artifact;
mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::hash_u64;
use crate::numeric::argmax;

pub use artifact::{load_model, save_model, ModelArtifact};
pub use train::{fit_with_dev_metric, train, Adam, Dataset, EpochRecord, TrainHistory};

/// Probabilities below this are clamped before taking the log.
pub const LOG_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// L2-normalize each input vector before the first layer.
    #[serde(default)]
    pub normalize_features: bool,
}

impl MlpConfig {
    /// Defaults: hidden width equal to the input width, Adam at 1e-3,
    /// batch 32, at most 100 epochs, patience 5.
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: input_dim,
            num_classes,
            seed: 0,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            normalize_features: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Validation("MLP dimensions, batch size and epochs must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Validation("MLP needs at least 2 classes".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation(format!(
                "MLP learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden_dim * self.input_dim + self.hidden_dim + self.num_classes * self.hidden_dim + self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    /// hidden_dim x input_dim
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// num_classes x hidden_dim
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Weights uniform in +-sqrt(1/fan_in), biases zero.
pub fn init(cfg: &MlpConfig) -> Result<MlpModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(hash_u64([b"mlp-init".as_slice(), &cfg.seed.to_le_bytes()]));
    let mut uniform = |rows: usize, cols: usize| {
        let bound = (1.0 / cols as f64).sqrt();
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
    };
    let w1 = uniform(cfg.hidden_dim, cfg.input_dim);
    let w2 = uniform(cfg.num_classes, cfg.hidden_dim);
    Ok(MlpModel {
        w1,
        b1: Array1::zeros(cfg.hidden_dim),
        w2,
        b2: Array1::zeros(cfg.num_classes),
        config: cfg.clone(),
    })
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    logits
}

impl MlpModel {
    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .all(|x| x.is_finite())
    }

    fn prepare(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Contract(format!(
                "feature dimension {} does not match MLP input dimension {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        let mut x = x.to_owned();
        if self.config.normalize_features {
            for mut row in x.rows_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 0.0 {
                    row /= norm;
                }
            }
        }
        Ok(x)
    }

    fn hidden(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.dot(&self.w1.t()) + &self.b1;
        h.mapv_inplace(f64::tanh);
        h
    }

    /// Class probabilities for each row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let x = self.prepare(x)?;
        let h = self.hidden(&x);
        Ok(softmax_rows(h.dot(&self.w2.t()) + &self.b2))
    }

    pub fn forward(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, feature.len()), feature).expect("row shape");
        Ok(self.forward_batch(x)?.row(0).to_vec())
    }

    pub fn predict(&self, feature: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(feature)?).expect("at least two classes"))
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let probs = self.forward_batch(x)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("standard layout")).expect("non-empty"))
            .collect())
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Validation("cannot score an empty dataset".into()));
        }
        let predicted = self.predict_batch(data.features.view())?;
        let correct = predicted.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every parameter.
    pub fn gradients(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
        let n = x.nrows();
        if n == 0 || labels.len() != n {
            return Err(Error::Contract("batch is empty or labels do not match rows".into()));
        }
        let x = self.prepare(x)?;
        let h = self.hidden(&x);
        let probs = softmax_rows(h.dot(&self.w2.t()) + &self.b2);
        let targets = one_hot(labels, self.config.num_classes)?;
        let loss = ce_loss(probs.view(), targets.view())?;

        let dz2 = (&probs - &targets) / n as f64;
        let gw2 = dz2.t().dot(&h);
        let gb2 = dz2.sum_axis(Axis(0));
        let dh = dz2.dot(&self.w2);
        let dz1 = dh * h.mapv(|v| 1.0 - v * v);
        let gw1 = dz1.t().dot(&x);
        let gb1 = dz1.sum_axis(Axis(0));
        Ok((
            loss,
            Gradients {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
            },
        ))
    }
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), num_classes));
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::Contract(format!("label index {y} out of range for {num_classes} classes")));
        }
        out[[i, y]] = 1.0;
    }
    Ok(out)
}

/// Mean over rows of `-sum_k y_k ln p_k`, with `p` clamped at [`LOG_EPSILON`].
pub fn ce_loss(probabilities: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<f64> {
    if probabilities.nrows() == 0 {
        return Err(Error::Validation("cross-entropy of an empty batch".into()));
    }
    if probabilities.dim() != targets.dim() {
        return Err(Error::Contract(format!(
            "probability shape {:?} does not match target shape {:?}",
            probabilities.dim(),
            targets.dim()
        )));
    }
    let mut clamped = false;
    let mut total = 0.0;
    for (p_row, y_row) in probabilities.rows().into_iter().zip(targets.rows()) {
        total += row_loss(p_row, y_row, &mut clamped);
    }
    if clamped {
        log::warn!("cross-entropy: probability below {LOG_EPSILON:e} at a target class was clamped");
    }
    Ok(total / probabilities.nrows() as f64)
}

fn row_loss(p: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, clamped: &mut bool) -> f64 {
    p.iter()
        .zip(y)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| {
            if p < LOG_EPSILON {
                *clamped = true;
            }
            -t * p.max(LOG_EPSILON).ln()
        })
        .sum()
}
