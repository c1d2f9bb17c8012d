use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, MlpConfig, MlpModel};
use crate::error::{Error, Result};
use crate::hashing::hash_u64;

/// Row-major features with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Contract("feature rows and labels differ in length".into()));
        }
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Contract("feature rows differ in dimension".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), d), flat).expect("shape checked");
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, model: &MlpModel) -> Self {
        let sizes = [model.w1.len(), model.b1.len(), model.w2.len(), model.b2.len()];
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let params: [&mut [f64]; 4] = [
            model.w1.as_slice_mut().expect("standard layout"),
            model.b1.as_slice_mut().expect("standard layout"),
            model.w2.as_slice_mut().expect("standard layout"),
            model.b2.as_slice_mut().expect("standard layout"),
        ];
        let grads: [&[f64]; 4] = [
            grads.w1.as_slice().expect("standard layout"),
            grads.b1.as_slice().expect("standard layout"),
            grads.w2.as_slice().expect("standard layout"),
            grads.b2.as_slice().expect("standard layout"),
        ];
        for (k, (param, grad)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                param[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based; earliest epoch with the highest dev accuracy.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
}

/// Mini-batch training with a caller-supplied dev metric evaluated after
/// every epoch. Training stops once the metric has failed to beat the best
/// value for `patience` consecutive epochs; the best epoch's weights are
/// returned.
pub fn fit_with_dev_metric(
    mut model: MlpModel,
    train: &Dataset,
    cfg: &MlpConfig,
    mut dev_metric: impl FnMut(&MlpModel) -> Result<f64>,
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("MLP training set is empty".into()));
    }
    if train.dim() != cfg.input_dim || model.config.input_dim != cfg.input_dim {
        return Err(Error::Contract(format!(
            "training features have dimension {}, MLP expects {}",
            train.dim(),
            cfg.input_dim
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hash_u64([b"mlp-shuffle".as_slice(), &cfg.seed.to_le_bytes()]));
    let mut adam = Adam::new(cfg.learning_rate, &model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut since_best = 0;
    let mut early_stopped = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train.features.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (loss, grads) = model.gradients(x.view(), &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: cfg.learning_rate,
                });
            }
            adam.step(&mut model, &grads);
            loss_sum += loss * batch.len() as f64;
        }
        if !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        let train_loss = loss_sum / train.len() as f64;
        let dev_accuracy = dev_metric(&model)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_accuracy,
        });

        if best.as_ref().is_none_or(|(acc, _, _)| dev_accuracy > *acc) {
            best = Some((dev_accuracy, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                early_stopped = true;
                break;
            }
        }
    }

    let stopped_epoch = epochs.len();
    let (_, best_epoch, best_model) = best.expect("max_epochs >= 1");
    Ok((
        best_model,
        TrainHistory {
            epochs,
            best_epoch,
            stopped_epoch,
            early_stopped,
        },
    ))
}

/// Trains on `train`, selecting by accuracy on `dev`.
pub fn train(model: MlpModel, train: &Dataset, dev: &Dataset, cfg: &MlpConfig) -> Result<(MlpModel, TrainHistory)> {
    if dev.is_empty() {
        return Err(Error::Validation("MLP dev set is empty".into()));
    }
    fit_with_dev_metric(model, train, cfg, |m| m.accuracy(dev))
}
