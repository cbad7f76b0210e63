use serde::{Deserialize, Serialize};

use super::loss::cross_entropy;
use super::mlp::MlpModel;
use super::optim::{Optimizer, Sgd};
use crate::datagen::{Dataset, Role};
use crate::error::{Error, Result};
use crate::numkit::{stream_key, RngStream};

/// Mini-batch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::OutOfRange {
                name: "learning_rate",
                value: self.learning_rate,
            });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::OutOfRange {
                name: "momentum",
                value: self.momentum,
            });
        }
        Ok(())
    }
}

/// Batch loss above this multiple of the first batch loss is divergence.
const DIVERGENCE_FACTOR: f64 = 1e3;

/// A trained classifier and its mean training loss per epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub loss_history: Vec<f64>,
}

/// Trains `model` with softmax cross-entropy, shuffling every epoch with a
/// stream derived from `cfg.seed`.
pub fn train_classifier(model: &MlpModel, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.role != Role::IdTrain {
        return Err(Error::Config(format!(
            "train_classifier expects an id_train dataset, got {:?}",
            ds.role
        )));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: ds.dim(),
        });
    }
    if ds.num_classes > model.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.output_dim(),
            got: ds.num_classes,
        });
    }

    let mut model = model.clone();
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut first_loss: Option<f64> = None;
    for epoch in 0..cfg.epochs {
        let mut rng = RngStream::new(cfg.seed, stream_key(0x7472_6169, &[epoch as u64]));
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = ds.inputs.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| ds.labels[i]).collect();
            let trace = model.forward_trace(&x)?;
            let (loss, grad) = cross_entropy(trace.output(), &y)?;
            // The stable log-sum-exp keeps the loss finite long after the
            // weights have blown up, so a runaway loss also counts.
            let reference = *first_loss.get_or_insert(loss);
            if !loss.is_finite() || loss > DIVERGENCE_FACTOR * reference.max(1.0) {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            let grads = model.backward_from(&trace, &grad)?;
            opt.step(&mut model, &grads);
            if !model.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        history.push(total / ds.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(model: &MlpModel, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = model.predict_labels(&ds.inputs)?;
    let hits = pred.iter().zip(&ds.labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ds.len() as f64)
}
