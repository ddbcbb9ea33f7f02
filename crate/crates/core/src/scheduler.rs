//! Drop-and-Refresh scheduling policy.
//!
//! The scheduler is a pure state machine. The training loop advances the
//! epoch counter, trains on the current active set while filling a
//! [`LossLedger`], then hands the ledger to [`end_of_epoch`] which decides
//! whether the active set is kept, shrunk to its hardest examples, or
//! refreshed back to the full population.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("population must contain at least one example")]
    EmptyPopulation,
    #[error("loss ledger has no entry for active example {0}")]
    MissingLoss(usize),
    #[error("loss ledger has an entry for inactive example {0}")]
    UnexpectedLoss(usize),
    #[error("loss for example {id} is not a finite non-negative value: {value}")]
    BadLoss { id: usize, value: f64 },
    #[error("epoch {epoch} exceeds total epochs {total}")]
    EpochOutOfRange { epoch: usize, total: usize },
}

/// How the keep count is rounded when shrinking the active set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepRounding {
    /// `max(1, ceil(keep_rate * active))`
    #[default]
    CeilAtLeastOne,
}

/// Length of the per-cycle window in which drops may fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveWindow {
    Epochs(usize),
    Unbounded,
}

impl ActiveWindow {
    fn admits(self, since_cycle_start: usize) -> bool {
        match self {
            ActiveWindow::Epochs(a) => since_cycle_start < a,
            ActiveWindow::Unbounded => true,
        }
    }
}

impl fmt::Display for ActiveWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActiveWindow::Epochs(a) => write!(f, "{a}"),
            ActiveWindow::Unbounded => f.write_str("unbounded"),
        }
    }
}

// Serialized as an integer or the string "unbounded".
impl Serialize for ActiveWindow {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ActiveWindow::Epochs(a) => s.serialize_u64(*a as u64),
            ActiveWindow::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for ActiveWindow {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(a) => Ok(ActiveWindow::Epochs(a as usize)),
            Raw::Str(s) if s == "unbounded" => Ok(ActiveWindow::Unbounded),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "active epochs must be an integer or \"unbounded\", got {s:?}"
            ))),
        }
    }
}

/// Drop-and-Refresh hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarConfig {
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub interval_epochs: usize,
    /// Fraction of the active set retained at each drop, in (0, 1].
    pub keep_rate: f64,
    pub active_epochs: ActiveWindow,
    /// Epochs after which the full population is restored. Strictly increasing.
    pub refresh_epochs: Vec<usize>,
    #[serde(default)]
    pub keep_rounding: KeepRounding,
    #[serde(default = "default_true")]
    pub reset_previous_on_refresh: bool,
}

fn default_true() -> bool {
    true
}

impl DarConfig {
    /// ImageNet schedule: 120 epochs, warm-up 10, interval 2, keep 0.9,
    /// active 10, refresh at 30/60/90.
    pub fn imagenet_default() -> Self {
        DarConfig {
            total_epochs: 120,
            warmup_epochs: 10,
            interval_epochs: 2,
            keep_rate: 0.9,
            active_epochs: ActiveWindow::Epochs(10),
            refresh_epochs: vec![30, 60, 90],
            keep_rounding: KeepRounding::CeilAtLeastOne,
            reset_previous_on_refresh: true,
        }
    }

    /// Policy that never drops anything; equivalent to uniform training.
    pub fn keep_all(total_epochs: usize) -> Self {
        DarConfig {
            total_epochs,
            warmup_epochs: 0,
            interval_epochs: 1,
            keep_rate: 1.0,
            active_epochs: ActiveWindow::Unbounded,
            refresh_epochs: Vec::new(),
            keep_rounding: KeepRounding::CeilAtLeastOne,
            reset_previous_on_refresh: true,
        }
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        let bad = |msg: String| Err(SchedulerError::InvalidConfig(msg));
        if self.total_epochs == 0 {
            return bad("total_epochs must be positive".into());
        }
        if !(self.keep_rate > 0.0 && self.keep_rate <= 1.0) {
            return bad(format!("keep_rate must lie in (0, 1], got {}", self.keep_rate));
        }
        if self.interval_epochs == 0 {
            return bad("interval_epochs must be at least 1".into());
        }
        if self.warmup_epochs >= self.total_epochs {
            return bad(format!(
                "warmup_epochs ({}) must be less than total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            ));
        }
        for pair in self.refresh_epochs.windows(2) {
            if pair[0] >= pair[1] {
                return bad(format!(
                    "refresh_epochs must be strictly increasing, got {} then {}",
                    pair[0], pair[1]
                ));
            }
        }
        for &r in &self.refresh_epochs {
            if r <= self.warmup_epochs || r > self.total_epochs {
                return bad(format!(
                    "refresh epoch {r} must lie in ({}, {}]",
                    self.warmup_epochs, self.total_epochs
                ));
            }
        }
        Ok(())
    }

    /// Number of examples retained when `active` examples are in the pool.
    pub fn keep_count(&self, active: usize) -> usize {
        keep_count(self.keep_rate, active)
    }
}

pub(crate) fn keep_count(keep_rate: f64, active: usize) -> usize {
    let k = (keep_rate * active as f64).ceil() as usize;
    k.clamp(1, active.max(1))
}

/// Live scheduler state. `epoch` counts completed-or-in-progress epochs,
/// starting at 0 before any training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub epoch: usize,
    pub t_start: usize,
    pub t_previous: usize,
    /// Ascending example ids currently in the training pool.
    pub active_ids: Vec<usize>,
    pub population: usize,
}

impl SchedulerState {
    /// Moves to the next epoch. Call before training on it.
    pub fn advance(&mut self) -> usize {
        self.epoch += 1;
        self.epoch
    }

    pub fn active_len(&self) -> usize {
        self.active_ids.len()
    }
}

/// Most recent per-example training loss within the current epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLedger {
    entries: BTreeMap<usize, f64>,
}

impl LossLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `loss` for `id`, replacing any earlier value this epoch.
    pub fn record(&mut self, id: usize, loss: f64) {
        self.entries.insert(id, loss);
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.entries.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(&id, &l)| (id, l))
    }

    /// Mean loss, summed in ascending id order.
    pub fn mean(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.values().sum::<f64>() / self.entries.len() as f64
    }

    /// Checks that the key set equals `active_ids` and every value is a
    /// finite non-negative loss.
    pub fn check_covers(&self, active_ids: &[usize]) -> Result<(), SchedulerError> {
        for &id in active_ids {
            match self.entries.get(&id) {
                None => return Err(SchedulerError::MissingLoss(id)),
                Some(&v) if !v.is_finite() || v < 0.0 => {
                    return Err(SchedulerError::BadLoss { id, value: v })
                }
                Some(_) => {}
            }
        }
        if self.entries.len() != active_ids.len() {
            // Some key is not in the active set.
            let extra = self
                .entries
                .keys()
                .find(|id| active_ids.binary_search(id).is_err())
                .copied()
                .unwrap_or_default();
            return Err(SchedulerError::UnexpectedLoss(extra));
        }
        Ok(())
    }
}

impl FromIterator<(usize, f64)> for LossLedger {
    fn from_iter<T: IntoIterator<Item = (usize, f64)>>(iter: T) -> Self {
        LossLedger {
            entries: iter.into_iter().collect(),
        }
    }
}

/// What the scheduler did at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EpochAction {
    Keep,
    /// Retained ids, ascending.
    Drop(Vec<usize>),
    Refresh,
}

impl EpochAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            EpochAction::Keep => ActionKind::Keep,
            EpochAction::Drop(_) => ActionKind::Drop,
            EpochAction::Refresh => ActionKind::Refresh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Keep,
    Drop,
    Refresh,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionKind::Keep => "keep",
            ActionKind::Drop => "drop",
            ActionKind::Refresh => "refresh",
        })
    }
}

pub fn init(config: &DarConfig, n: usize) -> Result<SchedulerState, SchedulerError> {
    config.validate()?;
    if n == 0 {
        return Err(SchedulerError::EmptyPopulation);
    }
    Ok(SchedulerState {
        epoch: 0,
        t_start: config.warmup_epochs,
        t_previous: config.warmup_epochs,
        active_ids: (0..n).collect(),
        population: n,
    })
}

/// Keeps the `max(1, ceil(keep_rate * |active|))` ids with the largest
/// losses. Equal losses prefer the smaller id. Output is ascending by id.
pub fn select_hardest(
    ledger: &LossLedger,
    active_ids: &[usize],
    keep_rate: f64,
) -> Result<Vec<usize>, SchedulerError> {
    if !(keep_rate > 0.0 && keep_rate <= 1.0) {
        return Err(SchedulerError::InvalidConfig(format!(
            "keep_rate must lie in (0, 1], got {keep_rate}"
        )));
    }
    let mut scored = Vec::with_capacity(active_ids.len());
    for &id in active_ids {
        let loss = ledger.get(id).ok_or(SchedulerError::MissingLoss(id))?;
        if !loss.is_finite() {
            return Err(SchedulerError::BadLoss { id, value: loss });
        }
        scored.push((id, loss));
    }
    let k = keep_count(keep_rate, scored.len());
    // Descending loss, ascending id on ties.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<usize> = scored.into_iter().take(k).map(|(id, _)| id).collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Applies the end-of-epoch policy for `state.epoch`, which must already be
/// the epoch just trained.
///
/// Drop fires when the epoch is past warm-up, exactly `interval_epochs` after
/// the previous drop, and inside the active window of the current cycle.
/// A refresh at the same epoch supersedes the drop. When the drop retains
/// every example (keep count equals the pool size) the action is `Keep`,
/// though the drop anchor still moves.
pub fn end_of_epoch(
    state: &SchedulerState,
    config: &DarConfig,
    ledger: &LossLedger,
) -> Result<(SchedulerState, EpochAction), SchedulerError> {
    let tau = state.epoch;
    if tau == 0 || tau > config.total_epochs {
        return Err(SchedulerError::EpochOutOfRange {
            epoch: tau,
            total: config.total_epochs,
        });
    }
    ledger.check_covers(&state.active_ids)?;

    let mut next = state.clone();
    let mut action = EpochAction::Keep;

    if tau > config.warmup_epochs
        && tau - next.t_previous == config.interval_epochs
        && config.active_epochs.admits(tau - next.t_start)
    {
        next.t_previous = tau;
        let kept = select_hardest(ledger, &next.active_ids, config.keep_rate)?;
        if kept.len() < next.active_ids.len() {
            next.active_ids = kept.clone();
            action = EpochAction::Drop(kept);
        }
    }

    if config.refresh_epochs.binary_search(&tau).is_ok() {
        next.t_start = tau;
        if config.reset_previous_on_refresh {
            next.t_previous = tau;
        }
        next.active_ids = (0..next.population).collect();
        action = EpochAction::Refresh;
    }

    Ok((next, action))
}

/// One row of a dry-run schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    /// Active-set size while training this epoch.
    pub size: usize,
    /// Action taken at the end of this epoch.
    pub action: ActionKind,
}

/// Dry-runs the schedule with an all-zero ledger. Sizes do not depend on
/// the losses, only membership does.
pub fn trace(config: &DarConfig, n: usize) -> Result<Vec<TraceRow>, SchedulerError> {
    trace_with(config, n, |_, _| 0.0)
}

/// Dry-runs the schedule with losses supplied by `loss(epoch, id)`.
pub fn trace_with<F>(config: &DarConfig, n: usize, mut loss: F) -> Result<Vec<TraceRow>, SchedulerError>
where
    F: FnMut(usize, usize) -> f64,
{
    let mut state = init(config, n)?;
    let mut rows = Vec::with_capacity(config.total_epochs);
    for _ in 0..config.total_epochs {
        let epoch = state.advance();
        let ledger: LossLedger = state.active_ids.iter().map(|&id| (id, loss(epoch, id))).collect();
        let size = state.active_len();
        let (next, action) = end_of_epoch(&state, config, &ledger)?;
        rows.push(TraceRow {
            epoch,
            size,
            action: action.kind(),
        });
        state = next;
    }
    Ok(rows)
}

/// Fraction of the full-data budget that the schedule consumes.
pub fn planned_cost(config: &DarConfig, n: usize) -> Result<f64, SchedulerError> {
    let rows = trace(config, n)?;
    Ok(cost_ratio(rows.iter().map(|r| r.size as u64).sum(), config.total_epochs, n))
}

/// `used / (epochs * n)`.
pub fn cost_ratio(used: u64, epochs: usize, n: usize) -> f64 {
    used as f64 / (epochs as u64 * n as u64) as f64
}

/// Writes a trace as `epoch,size,action` CSV rows with a header.
pub fn write_trace_csv<W: std::io::Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,size,action")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.epoch, r.size, r.action)?;
    }
    Ok(())
}
