//! Comparison policies: uniform full-data training and per-example loss
//! reweighting.

use thiserror::Error;

use crate::scheduler::{ActionKind, EpochAction, SchedulerState, TraceRow};

/// Lower bound applied to normalised weights before re-normalising.
pub const WEIGHT_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReweightError {
    #[error("loss for example {index} is not a finite non-negative value: {value}")]
    BadLoss { index: usize, value: f64 },
    #[error("no losses to weight")]
    Empty,
}

/// Uniform i.i.d. training never changes the pool.
pub fn uniform_policy(_state: &SchedulerState) -> EpochAction {
    EpochAction::Keep
}

pub fn uniform_trace(total_epochs: usize, n: usize) -> Vec<TraceRow> {
    (1..=total_epochs)
        .map(|epoch| TraceRow {
            epoch,
            size: n,
            action: ActionKind::Keep,
        })
        .collect()
}

/// Positive per-example weights with arithmetic mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn ones(n: usize) -> Self {
        WeightVector(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Loss-proportional weights: `loss_i / mean(loss)`, floored at
/// [`WEIGHT_FLOOR`] and scaled back to mean 1. All-zero losses give all ones.
pub fn reweight(prev_epoch_losses: &[f64]) -> Result<WeightVector, ReweightError> {
    if prev_epoch_losses.is_empty() {
        return Err(ReweightError::Empty);
    }
    if let Some((index, &value)) = prev_epoch_losses
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(ReweightError::BadLoss { index, value });
    }
    let n = prev_epoch_losses.len();
    let mean = prev_epoch_losses.iter().sum::<f64>() / n as f64;
    if mean == 0.0 {
        return Ok(WeightVector::ones(n));
    }
    let floored: Vec<f64> = prev_epoch_losses
        .iter()
        .map(|l| (l / mean).max(WEIGHT_FLOOR))
        .collect();
    let renorm = floored.iter().sum::<f64>() / n as f64;
    Ok(WeightVector(floored.into_iter().map(|w| w / renorm).collect()))
}
