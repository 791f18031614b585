//! Sequential, seeded training: one optimizer step per group of
//! `batch_unit_size` records, all their units' tables in one summed BCE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::TargetTable;
use crate::data::{DatasetRecord, RecordError};
use crate::model::{ModelError, UbertModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Records per optimizer step.
    pub batch_unit_size: usize,
    pub optimizer: Optimizer,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    /// Decode threshold on probabilities.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_unit_size: 1,
            optimizer: Optimizer::default(),
            grad_clip_norm: Some(5.0),
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted: it makes training an identity.
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_unit_size == 0 {
            return bad("batch_unit_size must be at least 1");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie strictly between 0 and 1");
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad("grad_clip_norm must be finite and positive");
            }
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                return bad("adam needs 0 <= beta < 1 and epsilon > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: RecordError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss {loss} at epoch {epoch}, step over records {records:?}; parameter norms: {norms:?}")]
    NonFinite {
        loss: f64,
        epoch: usize,
        records: Vec<usize>,
        norms: Vec<(String, f64)>,
    },
}

/// A record's units as token ids plus target tables.
pub type PreparedRecord = Vec<(Vec<usize>, Vec<TargetTable>)>;

pub fn prepare(model: &UbertModel, records: &[DatasetRecord]) -> Result<Vec<PreparedRecord>, TrainError> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let units = r.expand().map_err(|source| TrainError::Record { index, source })?;
            let max_len = model.config().max_len;
            if let Some(u) = units.iter().find(|u| u.instance.len() > max_len) {
                return Err(ModelError::TooLong {
                    len: u.instance.len(),
                    max_len,
                }
                .into());
            }
            Ok(units.into_iter().map(|u| (model.ids(&u.instance), u.targets)).collect())
        })
        .collect()
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

/// Trains in place and returns the summed loss of each epoch.
pub fn train(model: &mut UbertModel, records: &[DatasetRecord], config: &TrainConfig) -> Result<Vec<f64>, TrainError> {
    train_with(model, records, config, |_, _, _| {})
}

/// As [`train`], calling `on_epoch(epoch, loss, model)` after each epoch.
pub fn train_with(
    model: &mut UbertModel,
    records: &[DatasetRecord],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &UbertModel),
) -> Result<Vec<f64>, TrainError> {
    config.validate()?;
    let prepared = prepare(model, records)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState {
        m: model.params().iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        v: model.params().iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        step: 0,
    };
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for group in order.chunks(config.batch_unit_size) {
            let items = group
                .iter()
                .flat_map(|&i| prepared[i].iter().map(|(ids, t)| (ids.as_slice(), t.as_slice())));
            let (loss, grads, bound) = model.loss_and_grads(items)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    loss,
                    epoch,
                    records: group.to_vec(),
                    norms: model.params().iter().map(|(n, t)| (n.to_string(), t.norm())).collect(),
                });
            }
            epoch_loss += loss;
            let params = model.params_mut();
            params.zero_grads();
            params.accumulate(&grads, &bound);
            step(params, config, &mut adam);
        }
        on_epoch(epoch, epoch_loss, model);
        history.push(epoch_loss);
    }
    Ok(history)
}

fn step(params: &mut crate::tensor::ParamSet, config: &TrainConfig, adam: &mut AdamState) {
    let mut scale = 1.0;
    if let Some(clip) = config.grad_clip_norm {
        let norm = params
            .iter()
            .flat_map(|(_, t)| t.grad().unwrap_or(&[]).iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > clip {
            scale = clip / norm;
        }
    }
    let lr = config.learning_rate;
    adam.step += 1;
    for (k, (_, t)) in params.iter_mut().enumerate() {
        let g: Vec<f64> = match t.take_grad() {
            Some(g) => g.into_iter().map(|v| v * scale).collect(),
            None => continue,
        };
        let data = t.data_mut();
        match config.optimizer {
            Optimizer::Sgd => {
                for (p, g) in data.iter_mut().zip(&g) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let c1 = 1.0 - beta1.powi(adam.step);
                let c2 = 1.0 - beta2.powi(adam.step);
                let (m, v) = (&mut adam.m[k], &mut adam.v[k]);
                for i in 0..data.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                }
            }
        }
    }
}
