//! Python bindings: `import dar_sampling`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dar_core::harness::{self, ExperimentConfig, HarnessError};
use dar_core::model::{self, TrainHyper};
use dar_core::scheduler::{self, ActiveWindow, KeepRounding, LossLedger, SchedulerError, SchedulerState};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<(usize, usize, String)>;

fn sched_err(e: SchedulerError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Io { .. } => PyOSError::new_err(e.to_string()),
        HarnessError::NonFiniteLoss { .. } | HarnessError::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Schedule parameters. `active_epochs=None` means an unbounded window.
#[pyclass(name = "DarConfig", module = "dar_sampling", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDarConfig {
    pub inner: scheduler::DarConfig,
}

#[pymethods]
impl PyDarConfig {
    #[new]
    #[pyo3(signature = (total_epochs, warmup_epochs=0, interval_epochs=1, keep_rate=1.0, active_epochs=None, refresh_epochs=vec![], reset_previous_on_refresh=true))]
    fn new(
        total_epochs: usize,
        warmup_epochs: usize,
        interval_epochs: usize,
        keep_rate: f64,
        active_epochs: Option<usize>,
        refresh_epochs: Vec<usize>,
        reset_previous_on_refresh: bool,
    ) -> PyResult<Self> {
        let inner = scheduler::DarConfig {
            total_epochs,
            warmup_epochs,
            interval_epochs,
            keep_rate,
            active_epochs: active_epochs.map_or(ActiveWindow::Unbounded, ActiveWindow::Epochs),
            refresh_epochs,
            keep_rounding: KeepRounding::CeilAtLeastOne,
            reset_previous_on_refresh,
        };
        inner.validate().map_err(sched_err)?;
        Ok(Self { inner })
    }

    /// The 120-epoch default schedule.
    #[staticmethod]
    fn imagenet_default() -> Self {
        Self { inner: scheduler::DarConfig::imagenet_default() }
    }

    #[getter]
    fn total_epochs(&self) -> usize {
        self.inner.total_epochs
    }

    #[getter]
    fn warmup_epochs(&self) -> usize {
        self.inner.warmup_epochs
    }

    #[getter]
    fn interval_epochs(&self) -> usize {
        self.inner.interval_epochs
    }

    #[getter]
    fn keep_rate(&self) -> f64 {
        self.inner.keep_rate
    }

    #[getter]
    fn active_epochs(&self) -> Option<usize> {
        match self.inner.active_epochs {
            ActiveWindow::Epochs(a) => Some(a),
            ActiveWindow::Unbounded => None,
        }
    }

    #[getter]
    fn refresh_epochs(&self) -> Vec<usize> {
        self.inner.refresh_epochs.clone()
    }

    #[getter]
    fn reset_previous_on_refresh(&self) -> bool {
        self.inner.reset_previous_on_refresh
    }

    fn keep_count(&self, active: usize) -> usize {
        self.inner.keep_count(active)
    }

    /// Dry-run schedule as `(epoch, size, action)` tuples.
    fn trace(&self, n: usize) -> PyResult<Rows> {
        let rows = scheduler::trace(&self.inner, n).map_err(sched_err)?;
        Ok(rows.into_iter().map(|r| (r.epoch, r.size, r.action.to_string())).collect())
    }

    fn planned_cost(&self, n: usize) -> PyResult<f64> {
        scheduler::planned_cost(&self.inner, n).map_err(sched_err)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Stateful scheduler: call `begin_epoch()`, train on `active_ids`, then
/// `end_epoch(losses)` with one loss per active id.
#[pyclass(name = "Scheduler", module = "dar_sampling")]
pub struct PyScheduler {
    config: scheduler::DarConfig,
    state: SchedulerState,
}

#[pymethods]
impl PyScheduler {
    #[new]
    fn new(config: &PyDarConfig, n: usize) -> PyResult<Self> {
        let state = scheduler::init(&config.inner, n).map_err(sched_err)?;
        Ok(Self { config: config.inner.clone(), state })
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.state.epoch
    }

    #[getter]
    fn t_start(&self) -> usize {
        self.state.t_start
    }

    #[getter]
    fn t_previous(&self) -> usize {
        self.state.t_previous
    }

    #[getter]
    fn active_ids(&self) -> Vec<usize> {
        self.state.active_ids.clone()
    }

    fn begin_epoch(&mut self) -> PyResult<usize> {
        if self.state.epoch >= self.config.total_epochs {
            return Err(sched_err(SchedulerError::EpochOutOfRange {
                epoch: self.state.epoch + 1,
                total: self.config.total_epochs,
            }));
        }
        Ok(self.state.advance())
    }

    /// Applies the end-of-epoch action and returns its name.
    fn end_epoch(&mut self, losses: BTreeMap<usize, f64>) -> PyResult<String> {
        let ledger: LossLedger = losses.into_iter().collect();
        let (next, action) = scheduler::end_of_epoch(&self.state, &self.config, &ledger).map_err(sched_err)?;
        self.state = next;
        Ok(action.kind().to_string())
    }
}

/// Ids of the `ceil(keep_rate * len)` highest-loss entries, ascending.
#[pyfunction]
fn select_hardest(losses: BTreeMap<usize, f64>, active_ids: Vec<usize>, keep_rate: f64) -> PyResult<Vec<usize>> {
    let ledger: LossLedger = losses.into_iter().collect();
    scheduler::select_hardest(&ledger, &active_ids, keep_rate).map_err(sched_err)
}

#[pyfunction]
fn cost_ratio(used: u64, epochs: usize, n: usize) -> f64 {
    scheduler::cost_ratio(used, epochs, n)
}

/// Loss-proportional weights with mean 1.
#[pyfunction]
fn reweight(losses: Vec<f64>) -> PyResult<Vec<f64>> {
    dar_core::baselines::reweight(&losses)
        .map(|w| w.into_inner())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Step-decayed learning rate for a 1-based epoch.
#[pyfunction]
#[pyo3(signature = (base_lr, epoch, milestones=vec![], gamma=0.1))]
fn lr_at(base_lr: f64, epoch: usize, milestones: Vec<usize>, gamma: f64) -> f64 {
    let hyper = TrainHyper { base_lr, lr_milestones: milestones, lr_gamma: gamma, ..Default::default() };
    model::lr_at(&hyper, epoch)
}

fn load(config: &str, preset: Option<&str>, seed: Option<u64>) -> PyResult<ExperimentConfig> {
    let path = PathBuf::from(config);
    let mut cfg = if path.is_file() {
        ExperimentConfig::from_file(&path)
    } else {
        ExperimentConfig::from_toml(config)
    }
    .map_err(harness_err)?;
    if let Some(p) = preset {
        cfg.apply_preset(p).map_err(harness_err)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Trains one config (a file path or TOML text). Returns the report as JSON;
/// with `out_dir` also writes metrics.jsonl, report.json and model.bin.
#[pyfunction]
#[pyo3(signature = (config, preset=None, seed=None, out_dir=None))]
fn run_experiment(
    py: Python<'_>,
    config: &str,
    preset: Option<&str>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
) -> PyResult<String> {
    let cfg = load(config, preset, seed)?;
    let outcome = py.detach(|| harness::run_experiment(&cfg)).map_err(harness_err)?;
    if let Some(dir) = out_dir {
        harness::write_run(&outcome, &dir).map_err(harness_err)?;
    }
    serde_json::to_string(&outcome.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Per-epoch metrics of a run as JSON lines.
#[pyfunction]
#[pyo3(signature = (config, preset=None, seed=None))]
fn run_metrics(py: Python<'_>, config: &str, preset: Option<&str>, seed: Option<u64>) -> PyResult<String> {
    let cfg = load(config, preset, seed)?;
    let outcome = py.detach(|| harness::run_experiment(&cfg)).map_err(harness_err)?;
    Ok(outcome.report.metrics_jsonl())
}

/// Dry-run schedule for a config: `(rows, cost_ratio)`.
#[pyfunction]
#[pyo3(signature = (config, preset=None, n=None))]
fn cost(config: &str, preset: Option<&str>, n: Option<usize>) -> PyResult<(Rows, f64)> {
    let cfg = load(config, preset, None)?;
    let report = harness::cost_report(&cfg, n).map_err(harness_err)?;
    let rows = report.rows.into_iter().map(|r| (r.epoch, r.size, r.action.to_string())).collect();
    Ok((rows, report.cost_ratio))
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDarConfig>()?;
    m.add_class::<PyScheduler>()?;
    m.add_function(wrap_pyfunction!(select_hardest, m)?)?;
    m.add_function(wrap_pyfunction!(cost_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(reweight, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(cost, m)?)?;
    Ok(())
}

#[pymodule]
fn dar_sampling(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
