//! Loss, backpropagation through time, Adam and the minibatch training loop.

mod adam;
pub(crate) mod bptt;
mod gradcheck;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use bptt::{bptt_ml, bptt_ml_with, bptt_seq2seq, Feedback, Gradients};
pub use gradcheck::{grad_check, relative_discrepancy, GRAD_CHECK_FLOOR};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};
use crate::nn::{Forecaster, MlModel, Parameterized, Seq2SeqModel};
use crate::signals::Sample;

/// Mean over points of the squared L2 deviation, i.e. `E_1^2`.
pub fn loss_mse(pred: &[Vector], truth: &[Vector]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            op: "loss_mse",
            left: (pred.len(), 0),
            right: (truth.len(), 0),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("loss_mse"));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        total += p.sub(t)?.norm_sq();
    }
    Ok(total / pred.len() as f64)
}

/// A parameter bundle with a differentiable per-sample loss.
pub trait Trainable: Parameterized + Forecaster + Send + Sync {
    fn loss_and_grad(&self, sample: &Sample) -> Result<(f64, Gradients<Self>)>;

    fn loss(&self, sample: &Sample) -> Result<f64> {
        let pred = self.forecast(&sample.input, sample.target.len())?;
        loss_mse(&pred, &sample.target)
    }

    fn input_dim(&self) -> usize;
}

impl Trainable for Seq2SeqModel {
    fn loss_and_grad(&self, sample: &Sample) -> Result<(f64, Self)> {
        bptt_seq2seq(self, sample)
    }

    /// Loss over a single decoding pass, whatever the target length.
    fn loss(&self, sample: &Sample) -> Result<f64> {
        let pred = crate::nn::predict_traditional(self, &sample.input, sample.target.len())?;
        loss_mse(&pred, &sample.target)
    }

    fn input_dim(&self) -> usize {
        self.dims.d
    }
}

impl Trainable for MlModel {
    fn loss_and_grad(&self, sample: &Sample) -> Result<(f64, Self)> {
        bptt_ml(self, sample)
    }

    fn input_dim(&self) -> usize {
        self.dims.d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            validation_fraction: 0.2,
            seed: 0,
            shuffle: true,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.validation_fraction >= 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the split leaves no validation samples.
    pub val_loss: Option<f64>,
}

/// `epoch,train_loss,val_loss`; an empty field marks a missing validation loss.
pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<history>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    std::fs::write(path, history_csv(history)?).map_err(|e| Error::io(path, e))
}

/// Training/validation index split: seeded shuffle, last fraction held out.
pub fn split_indices(n: usize, fraction: f64, rng: &mut Rng, shuffle: bool) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        rng.shuffle(&mut idx);
    }
    let n_val = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn check_dataset<M: Trainable>(model: &M, dataset: &[Sample]) -> Result<()> {
    let first = dataset.first().ok_or(Error::Empty("train"))?;
    let (m, k) = (first.input.len(), first.target.len());
    let d = model.input_dim();
    for s in dataset {
        let dims_ok = s.input.len() == m
            && s.target.len() == k
            && s.input.iter().chain(&s.target).all(|v| v.dim() == d);
        if !dims_ok || m == 0 || k == 0 {
            return Err(Error::InvalidConfig(format!(
                "sample at p={} does not match the shape of the first sample (m={m}, k={k}, d={d})",
                s.p
            )));
        }
    }
    Ok(())
}

/// Mean loss over `samples`, summed in index order.
pub fn mean_loss<M: Trainable>(model: &M, samples: &[&Sample]) -> Result<f64> {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| model.loss(s))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Minibatch Adam over a seeded split. Per-sample gradients are computed in
/// parallel and summed in batch order, so results do not depend on the
/// number of worker threads.
pub fn train<M: Trainable>(
    mut model: M,
    dataset: &[Sample],
    config: &TrainConfig,
) -> Result<(M, Vec<EpochRecord>)> {
    config.validate()?;
    check_dataset(&model, dataset)?;
    let mut rng = Rng::new(config.seed);
    let (mut train_idx, val_idx) =
        split_indices(dataset.len(), config.validation_fraction, &mut rng, config.shuffle);
    let val: Vec<&Sample> = val_idx.iter().map(|&i| &dataset[i]).collect();
    let adam = config.adam();
    let mut state = AdamState::new(&model);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        if config.shuffle {
            rng.shuffle(&mut train_idx);
        }
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let results: Vec<(f64, M)> = batch
                .par_iter()
                .map(|&i| model.loss_and_grad(&dataset[i]))
                .collect::<Result<_>>()?;
            let mut grad = model.zeros_like();
            for (loss, g) in &results {
                epoch_loss += loss;
                for (acc, gi) in grad.tensors_mut().into_iter().zip(g.tensors()) {
                    for (a, b) in acc.iter_mut().zip(gi) {
                        *a += b;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            scale_tensors(&mut grad, scale);
            if let Some(max_norm) = config.clip_norm {
                let norm = grad
                    .tensors()
                    .iter()
                    .flat_map(|t| t.iter())
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                if norm > max_norm {
                    scale_tensors(&mut grad, max_norm / norm);
                }
            }
            adam_step(&mut model, &grad, &mut state, &adam)?;
        }
        let train_loss = epoch_loss / train_idx.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(mean_loss(&model, &val)?)
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok((model, history))
}

fn scale_tensors<M: Parameterized>(m: &mut M, alpha: f64) {
    for t in m.tensors_mut() {
        for x in t.iter_mut() {
            *x *= alpha;
        }
    }
}
