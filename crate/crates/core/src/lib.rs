//! Drop-and-Refresh (DaR) training-data sampling.
//!
//! DaR trains on every example during warm-up, then repeatedly keeps only
//! the hardest fraction of the current pool (highest recorded loss) every
//! few epochs and periodically refreshes the pool back to the full dataset.
//! This crate holds the policy as a pure state machine ([`scheduler`]), a
//! tiny deterministic classifier that produces the per-example losses
//! ([`model`]), data loading and batching ([`datasets`]), the comparison
//! policies ([`baselines`]) and an experiment runner ([`harness`]).

pub mod baselines;
pub mod datasets;
pub mod harness;
pub mod model;
pub mod scheduler;

pub use baselines::{reweight, uniform_policy, WeightVector};
pub use datasets::{AugmentPolicy, Batch, Dataset, SyntheticSpec};
pub use harness::{run_experiment, ExperimentConfig, HarnessError, PolicyKind, RunReport};
pub use model::{ParamSet, TrainHyper};
pub use scheduler::{
    end_of_epoch, init, planned_cost, select_hardest, trace, ActionKind, ActiveWindow, DarConfig, EpochAction,
    LossLedger, SchedulerState,
};
