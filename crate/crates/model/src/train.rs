//! Mini-batch Adam over trainable parameters with best-validation selection.

use bdlm_core::synth::mix_seed;
use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// End early once validation accuracy reaches 1. The selected epoch is
    /// unaffected because later epochs can only tie.
    pub stop_at_perfect_val: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 50,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            stop_at_perfect_val: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the highest validation accuracy.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub log: Vec<EpochLog>,
}

pub fn accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let windows: Vec<&[f64]> = samples.iter().map(|s| s.window.as_slice()).collect();
    let preds = model.predict_batch(&windows)?;
    let hits = preds.iter().zip(samples).filter(|(p, s)| **p == s.class).count();
    Ok(hits as f64 / samples.len() as f64)
}

struct Adam {
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(model: &Model) -> Result<Self> {
        let names = model.trainable_names();
        let sizes = names
            .iter()
            .map(|n| Ok(model.params().get(n)?.shape().iter().product()))
            .collect::<Result<Vec<usize>>>()?;
        Ok(Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            names,
            step: 0,
        })
    }

    fn update(&mut self, model: &mut Model, grads: &crate::model::Gradients, cfg: &TrainConfig) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        let named = grads.named();
        for (name, g) in named {
            let i = self
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| ModelError::UnknownParameter(name.clone()))?;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = model.trainable_mut(&name)?.data_mut();
            for j in 0..p.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= cfg.lr * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
        Ok(())
    }
}

/// Trains `model` on `train`, scoring `val` after every epoch. Only
/// trainable parameters move; optimizer state starts fresh.
pub fn train(model: Model, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset("training set".into()));
    }
    if val.is_empty() {
        return Err(ModelError::EmptyDataset("validation set".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(ModelError::InvalidConfig("need batch_size > 0, epochs > 0, lr > 0".into()));
    }
    let n_classes = model.config().n_classes;
    if let Some(s) = train.iter().chain(val).find(|s| s.class >= n_classes) {
        return Err(ModelError::InvalidConfig(format!(
            "class {} outside the model's {n_classes} classes",
            s.class
        )));
    }
    let mut model = model;
    let mut adam = Adam::new(&model)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let windows: Vec<&[f64]> = batch.iter().map(|&i| train[i].window.as_slice()).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| train[i].class).collect();
            let (loss, grads) = model.loss_and_grad(&windows, &targets)?;
            if !loss.is_finite() {
                return Err(ModelError::DivergedLoss { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            adam.update(&mut model, &grads, cfg)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_accuracy = accuracy(&model, val)?;
        debug!("epoch {epoch}: train_loss={train_loss:.6} val_accuracy={val_accuracy:.4}");
        log.push(EpochLog { epoch, train_loss, val_accuracy });
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, model.clone()));
        }
        if cfg.stop_at_perfect_val && val_accuracy >= 1.0 {
            break;
        }
    }
    let (best_epoch, best_val_accuracy, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, best_epoch, best_val_accuracy, log })
}
