use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{weighted_ce, LossSpec};
use super::model::{Mode, Model};
use super::optim::SgdMomentum;
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            momentum: 0.9,
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Network inputs paired with class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainData {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl TrainData {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::invalid(format!("{} inputs for {} labels", inputs.len(), labels.len())));
        }
        Ok(TrainData { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let epochs = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(History { epochs })
    }
}

/// Eval-mode mean loss and accuracy.
pub fn evaluate(model: &Model, data: &TrainData, loss: &LossSpec) -> Result<(f64, f64)> {
    let probs = model.predict_proba(&data.inputs)?;
    let mut total = 0.0;
    let mut hits = 0;
    for (chunk, labels) in data.inputs.chunks(64).zip(data.labels.chunks(64)) {
        let y = model.infer(&Tensor::stack(chunk)?)?;
        total += weighted_ce(&y, labels, loss)? * labels.len() as f64;
    }
    for (row, &l) in probs.iter().zip(&data.labels) {
        if argmax(row) == l {
            hits += 1;
        }
    }
    let n = data.len() as f64;
    Ok((total / n, hits as f64 / n))
}

/// Mini-batch SGD-momentum training with seeded shuffling and dropout.
pub fn train(
    model: &mut Model,
    train: &TrainData,
    val: Option<&TrainData>,
    cfg: &TrainConfig,
    loss: &LossSpec,
) -> Result<History> {
    if train.is_empty() {
        return Err(Error::data("training split is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    loss.validate()?;
    let mut opt = SgdMomentum::new(model.params(), cfg.lr, cfg.momentum)?;
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut dropout_rng = rng::stream(cfg.seed, u64::MAX);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let inputs: Vec<Tensor> = idx.iter().map(|&i| train.inputs[i].clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let batch = Tensor::stack(&inputs)?;
            let (y, cache) = model.forward(&batch, Mode::Train, &mut dropout_rng)?;
            let batch_loss = weighted_ce(&y, &labels, loss)?;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, lr: cfg.lr });
            }
            let grads = model.backward(&cache, &y, &labels, loss)?;
            opt.step(model.params_mut(), &grads)?;
            loss_sum += batch_loss * labels.len() as f64;
            for (i, &l) in labels.iter().enumerate() {
                let pred = if y.shape()[1] == 1 {
                    usize::from(y.outer(i)[0] >= 0.5)
                } else {
                    argmax(y.outer(i))
                };
                hits += usize::from(pred == l);
            }
            step += 1;
        }
        let (val_loss, val_accuracy) = match val.filter(|v| !v.is_empty()) {
            Some(v) => {
                let (l, a) = evaluate(model, v, loss)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::debug!("{}: {record:?}", model.config().name);
        history.epochs.push(record);
    }
    Ok(history)
}
