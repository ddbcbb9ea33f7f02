use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PolicyKind};
use super::HarnessError;
use crate::baselines::{reweight, uniform_policy, WeightVector};
use crate::datasets::{epoch_batches, Dataset};
use crate::model::{accuracy, loss_and_grad, lr_at, ParamSet, Sgd};
use crate::scheduler::{self, cost_ratio, end_of_epoch, ActionKind, LossLedger};

/// Metrics for one epoch, written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub active_count: usize,
    pub mean_train_loss: f64,
    /// `None` when no validation examples were held out.
    pub validation_accuracy: Option<f64>,
    pub learning_rate: f64,
    pub cumulative_examples_used: u64,
    pub action: ActionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub train_examples: usize,
    pub validation_examples: usize,
    pub records: Vec<EpochRecord>,
    pub final_validation_accuracy: Option<f64>,
    pub cost_ratio: f64,
    pub planned_cost: f64,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    /// Epoch records as JSON lines. Contains nothing time-dependent.
    pub fn metrics_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }
}

/// A finished run: its report, trained parameters and the per-epoch ledgers.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub params: ParamSet,
    pub ledgers: Vec<LossLedger>,
}

/// Loads the data, splits off validation and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let data = cfg.data.load()?;
    let (train, val) = data.split(cfg.data.validation_fraction, cfg.seed)?;
    run_on(cfg, &train, &val)
}

/// Planned cost for the config's policy at population `n`.
pub fn planned_cost_for(cfg: &ExperimentConfig, n: usize) -> Result<f64, HarnessError> {
    match cfg.policy {
        PolicyKind::Dar => Ok(scheduler::planned_cost(&cfg.dar_config(), n)?),
        PolicyKind::Uniform | PolicyKind::Reweight => Ok(1.0),
    }
}

/// Runs the training loop on an already split dataset.
///
/// Each epoch: shuffle the active ids into batches, and for every batch run
/// forward/backward/update while recording each example's loss in the
/// ledger; then evaluate, emit a record, and let the policy act.
pub fn run_on(cfg: &ExperimentConfig, train: &Dataset, val: &Dataset) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let n = train.len();
    let epochs = cfg.train.epochs;

    let mut sizes = vec![train.dim()];
    sizes.extend(&cfg.model.hidden);
    sizes.push(train.class_count);
    let mut params = ParamSet::init(&sizes, cfg.seed)?;
    let mut opt = Sgd::new(cfg.train.hyper.clone(), &params);

    // Non-DaR policies still carry a scheduler state for the active set.
    let dar = match cfg.policy {
        PolicyKind::Dar => cfg.dar_config(),
        _ => scheduler::DarConfig::keep_all(epochs),
    };
    let mut state = scheduler::init(&dar, n)?;
    let mut weights = WeightVector::ones(n);

    let mut records = Vec::with_capacity(epochs);
    let mut ledgers = Vec::with_capacity(epochs);
    let mut used: u64 = 0;

    for _ in 0..epochs {
        let epoch = state.advance();
        let lr = lr_at(&cfg.train.hyper, epoch);
        let mut ledger = LossLedger::new();

        for ids in epoch_batches(&state.active_ids, cfg.batch_size, cfg.seed, epoch)? {
            let batch = train.batch(&ids, &cfg.data.augment, cfg.seed, epoch)?;
            let sample_weights: Option<Vec<f64>> = (cfg.policy == PolicyKind::Reweight)
                .then(|| batch.ids.iter().map(|&i| weights.get(i)).collect());
            let (out, grads) = loss_and_grad(
                &params,
                &batch.features,
                &batch.labels,
                sample_weights.as_deref(),
                cfg.train.hyper.weight_decay,
            )?;
            for (&id, &loss) in batch.ids.iter().zip(&out.per_example_loss) {
                if !loss.is_finite() {
                    return Err(HarnessError::NonFiniteLoss { epoch, example: id, value: loss });
                }
                ledger.record(id, loss);
            }
            opt.step_with_lr(&mut params, &grads, lr)?;
            if !params.is_finite() {
                return Err(HarnessError::Diverged { epoch });
            }
        }

        let active_count = state.active_len();
        used += active_count as u64;
        let validation_accuracy = if val.is_empty() {
            None
        } else {
            Some(accuracy(&params, &val.features, &val.labels)?)
        };

        let (next, action) = match cfg.policy {
            PolicyKind::Dar => end_of_epoch(&state, &dar, &ledger)?,
            PolicyKind::Uniform => {
                ledger.check_covers(&state.active_ids)?;
                let a = uniform_policy(&state);
                (state.clone(), a)
            }
            PolicyKind::Reweight => {
                ledger.check_covers(&state.active_ids)?;
                let losses: Vec<f64> = ledger.iter().map(|(_, l)| l).collect();
                weights = reweight(&losses)?;
                let a = uniform_policy(&state);
                (state.clone(), a)
            }
        };

        records.push(EpochRecord {
            epoch,
            active_count,
            mean_train_loss: ledger.mean(),
            validation_accuracy,
            learning_rate: lr,
            cumulative_examples_used: used,
            action: action.kind(),
        });
        ledgers.push(ledger);
        state = next;
    }

    let report = RunReport {
        config: cfg.clone(),
        train_examples: n,
        validation_examples: val.len(),
        final_validation_accuracy: records.last().and_then(|r| r.validation_accuracy),
        cost_ratio: cost_ratio(used, epochs, n),
        planned_cost: planned_cost_for(cfg, n)?,
        records,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome { report, params, ledgers })
}
