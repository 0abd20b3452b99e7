//! The epoch loop shared by every trainer: shuffled mini-batches, one
//! validation pass per epoch, best-on-validation retention and patience.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adafactor::{adafactor_step, sgd_step, AdafactorConfig, OptimizerState};
use super::config::{OptimizerKind, TrainConfig};
use crate::corpus::Example;
use crate::error::Result;
use crate::rng::rng_for;
use crate::tensor::Mat;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub method: String,
    pub stage: usize,
    pub epoch: usize,
    /// Mean batch loss over the epoch's updating batches.
    pub loss: f64,
    pub val_metric: f64,
    /// Subset-sampler queries so far in this stage.
    pub sampler_calls: u64,
    /// Examples that contributed to the loss this epoch.
    pub contributing: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct BatchStats {
    pub loss: f64,
    pub contributing: usize,
    pub sampler_calls: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub best_epoch: usize,
    pub best_val: f64,
    pub epochs_run: usize,
}

/// Train `state` in place, leaving it at its best validation snapshot; on
/// ties the later (longer trained) snapshot wins, which keeps widening the
/// margins after validation saturates. Stops after `patience` epochs
/// without strict improvement.
pub(crate) fn fit<S: Clone>(
    state: &mut S,
    train: &[Example],
    cfg: &TrainConfig,
    tag: &str,
    method: &str,
    stage: usize,
    log: &mut Vec<LogRecord>,
    mut step: impl FnMut(&mut S, &[Example]) -> Result<BatchStats>,
    mut validate: impl FnMut(&S) -> Result<f64>,
) -> Result<FitSummary> {
    let mut rng = rng_for(cfg.seed, &format!("{tag}/shuffle"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, S)> = None;
    let mut epochs_run = 0;
    let mut last_gain = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut updates, mut contributing, mut calls) = (0.0, 0usize, 0usize, 0u64);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train[i].clone()).collect();
            let s = step(state, &batch)?;
            calls = s.sampler_calls;
            if s.contributing > 0 {
                loss_sum += s.loss;
                updates += 1;
                contributing += s.contributing;
            }
        }
        epochs_run = epoch;
        let val = validate(state)?;
        log.push(LogRecord {
            method: method.to_string(),
            stage,
            epoch,
            loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
            val_metric: val,
            sampler_calls: calls,
            contributing,
        });
        match &best {
            Some((_, b, _)) if val < *b => {}
            Some((_, b, _)) if val == *b => best = Some((epoch, val, state.clone())),
            _ => {
                best = Some((epoch, val, state.clone()));
                last_gain = epoch;
            }
        }
        if epoch - last_gain >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_val, snapshot) = best.expect("max_epochs >= 1");
    *state = snapshot;
    Ok(FitSummary { best_epoch, best_val, epochs_run })
}

/// One parameter update with the configured optimizer.
pub(crate) fn apply_update(
    param: &mut Mat<f32>,
    grad: &Mat<f32>,
    state: &mut OptimizerState<f32>,
    cfg: &TrainConfig,
) -> Result<()> {
    match cfg.optimizer {
        OptimizerKind::Adafactor => adafactor_step(param, grad, state, cfg.learning_rate, &AdafactorConfig::default()),
        OptimizerKind::Sgd => sgd_step(param, grad, cfg.learning_rate),
    }
}

