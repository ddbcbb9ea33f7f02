//! Experiment runner: wires the scheduler, model and data together, records
//! per-epoch metrics and realized cost, and writes results to disk.

mod compare;
mod config;
mod output;
mod run;

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::baselines::{uniform_trace, ReweightError};
use crate::datasets::DataError;
use crate::model::ModelError;
use crate::scheduler::{self, SchedulerError, TraceRow};

pub use compare::{compare, ComparisonRow, ComparisonTable};
pub use config::{
    validation_count, DarSection, DataConfig, ExperimentConfig, ModelConfig, OutputConfig, PolicyKind, SourceKind,
    SyntheticSection, TrainConfig, PRESETS,
};
pub use output::{
    export_features, features_csv, load_params, save_params, sidecar_path, write_atomic, write_run, ModelSidecar,
    METRICS_FILE, MODEL_FILE, REPORT_FILE,
};
pub use run::{planned_cost_for, run_experiment, run_on, EpochRecord, RunOutcome, RunReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Reweight(#[from] ReweightError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss {value} at epoch {epoch}, example {example}")]
    NonFiniteLoss { epoch: usize, example: usize, value: f64 },
    #[error("parameters became non-finite during epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("compare: {0}")]
    Compare(String),
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Data(_) => "data",
            HarnessError::Model(_) => "model",
            HarnessError::Scheduler(_) => "scheduler",
            HarnessError::Reweight(_) => "reweight",
            HarnessError::Io { .. } => "io",
            HarnessError::NonFiniteLoss { .. } => "non_finite_loss",
            HarnessError::Diverged { .. } => "diverged",
            HarnessError::Compare(_) => "compare",
        }
    }
}

/// Dry-run schedule and its cost ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub population: usize,
    pub rows: Vec<TraceRow>,
    pub cost_ratio: f64,
}

impl CostReport {
    /// `epoch,size,action` rows followed by `cost_ratio=<value>`.
    pub fn render(&self) -> String {
        let mut buf = Vec::new();
        scheduler::write_trace_csv(&self.rows, &mut buf).expect("write to Vec");
        let mut s = String::from_utf8(buf).expect("ascii");
        s.push_str(&format!("cost_ratio={}\n", self.cost_ratio));
        s
    }
}

/// Schedule for `cfg` without training. The population defaults to the
/// number of training examples left after the validation split.
pub fn cost_report(cfg: &ExperimentConfig, population: Option<usize>) -> Result<CostReport, HarnessError> {
    cfg.validate()?;
    let n = match population {
        Some(0) => return Err(HarnessError::Config("population must be positive".into())),
        Some(n) => n,
        None => {
            let total = cfg.data.population()?;
            total - validation_count(total, cfg.data.validation_fraction)
        }
    };
    let rows = match cfg.policy {
        PolicyKind::Dar => scheduler::trace(&cfg.dar_config(), n)?,
        PolicyKind::Uniform | PolicyKind::Reweight => uniform_trace(cfg.train.epochs, n),
    };
    let used: u64 = rows.iter().map(|r| r.size as u64).sum();
    Ok(CostReport {
        population: n,
        cost_ratio: scheduler::cost_ratio(used, cfg.train.epochs, n),
        rows,
    })
}
