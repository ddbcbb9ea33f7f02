//! Experiment configuration, read from TOML with dotted sections
//! (`dar.keep_rate`, `model.hidden`, `data.source`, ...).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::datasets::{self, AugmentPolicy, Dataset, Spread, SyntheticSpec};
use crate::model::TrainHyper;
use crate::scheduler::{ActiveWindow, DarConfig, KeepRounding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Dar,
    Uniform,
    Reweight,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyKind::Dar => "dar",
            PolicyKind::Uniform => "uniform",
            PolicyKind::Reweight => "reweight",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Synthetic,
    Csv,
    Idx,
}

/// Synthetic mixture, either with explicit means or seeded random ones.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub means: Option<Vec<Vec<f64>>>,
    pub counts: Option<Vec<usize>>,
    pub classes: Option<usize>,
    pub dim: Option<usize>,
    pub separation: Option<f64>,
    pub per_class: Option<usize>,
    pub std: Option<Spread>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSection {
    pub fn to_spec(&self) -> Result<SyntheticSpec, HarnessError> {
        let std = self.std.clone().unwrap_or(Spread::Shared(1.0));
        let spec = match &self.means {
            Some(means) => {
                let counts = match (&self.counts, self.per_class) {
                    (Some(c), None) => c.clone(),
                    (None, Some(k)) => vec![k; means.len()],
                    _ => return Err(cfg_err("data.synthetic needs exactly one of `counts` or `per_class`")),
                };
                SyntheticSpec {
                    means: means.clone(),
                    std,
                    counts,
                    seed: self.seed,
                }
            }
            None => {
                let (Some(classes), Some(dim)) = (self.classes, self.dim) else {
                    return Err(cfg_err("data.synthetic needs `means` or both `classes` and `dim`"));
                };
                let Spread::Shared(s) = std else {
                    return Err(cfg_err("random synthetic means take a single shared `std`"));
                };
                let mut spec = SyntheticSpec::random_means(
                    classes,
                    dim,
                    self.separation.unwrap_or(1.0),
                    s,
                    self.per_class.unwrap_or(100),
                    self.seed,
                );
                if let Some(c) = &self.counts {
                    spec.counts = c.clone();
                }
                spec
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    /// CSV file for `source = "csv"`.
    pub path: Option<PathBuf>,
    /// IDX image and label files for `source = "idx"`.
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub validation_fraction: f64,
    #[serde(default)]
    pub augment: AugmentPolicy,
    /// Overrides the inferred class count.
    pub class_count: Option<usize>,
}

impl DataConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let has = (self.path.is_some(), self.images.is_some() || self.labels.is_some(), self.synthetic.is_some());
        let ok = match self.source {
            SourceKind::Csv => has == (true, false, false),
            SourceKind::Idx => has == (false, true, false) && self.images.is_some() && self.labels.is_some(),
            SourceKind::Synthetic => has == (false, false, true),
        };
        if !ok {
            return Err(cfg_err(
                "data needs exactly one source: `path` for csv, `images` + `labels` for idx, [data.synthetic] for synthetic",
            ));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(cfg_err(format!(
                "data.validation_fraction must lie in [0, 0.5], got {}",
                self.validation_fraction
            )));
        }
        match self.augment {
            AugmentPolicy::GaussianNoise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(cfg_err("augment sigma must be non-negative"))
            }
            AugmentPolicy::HorizontalFlip { prob } if !(0.0..=1.0).contains(&prob) => {
                Err(cfg_err("augment flip prob must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    pub fn load(&self) -> Result<Dataset, HarnessError> {
        self.validate()?;
        let ds = match self.source {
            SourceKind::Csv => datasets::load_csv(self.path.as_ref().unwrap())?,
            SourceKind::Idx => datasets::load_idx(self.images.as_ref().unwrap(), self.labels.as_ref().unwrap())?,
            SourceKind::Synthetic => datasets::gen_gaussian(&self.synthetic.as_ref().unwrap().to_spec()?)?,
        };
        match self.class_count {
            Some(k) => Ok(ds.with_class_count(k)?),
            None => Ok(ds),
        }
    }

    /// Total example count; synthetic sources are counted without sampling.
    pub fn population(&self) -> Result<usize, HarnessError> {
        self.validate()?;
        match self.source {
            SourceKind::Synthetic => Ok(self.synthetic.as_ref().unwrap().to_spec()?.total()),
            _ => Ok(self.load()?.len()),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.path, &mut self.images, &mut self.labels].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Validation examples held out of `n`; matches [`Dataset::split`].
pub fn validation_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).min(n.saturating_sub(1))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; empty means logistic regression.
    #[serde(default)]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(flatten)]
    pub hyper: TrainHyper,
}

/// DaR fields; the epoch count comes from `train.epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarSection {
    #[serde(default)]
    pub warmup: usize,
    #[serde(default = "one")]
    pub interval: usize,
    #[serde(default = "unit")]
    pub keep_rate: f64,
    #[serde(default = "unbounded")]
    pub active: ActiveWindow,
    #[serde(default)]
    pub refresh: Vec<usize>,
    #[serde(default = "yes")]
    pub reset_previous_on_refresh: bool,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn unbounded() -> ActiveWindow {
    ActiveWindow::Unbounded
}
fn yes() -> bool {
    true
}
fn default_batch() -> usize {
    32
}

impl Default for DarSection {
    fn default() -> Self {
        DarSection {
            warmup: 0,
            interval: 1,
            keep_rate: 1.0,
            active: ActiveWindow::Unbounded,
            refresh: Vec::new(),
            reset_previous_on_refresh: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub dar: DarSection,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Names accepted by [`ExperimentConfig::apply_preset`].
pub const PRESETS: &[&str] = &["imagenet-default", "desk", "uniform", "reweight"];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Parses a config file; relative data paths resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.data.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.policy.to_string())
    }

    pub fn dar_config(&self) -> DarConfig {
        DarConfig {
            total_epochs: self.train.epochs,
            warmup_epochs: self.dar.warmup,
            interval_epochs: self.dar.interval,
            keep_rate: self.dar.keep_rate,
            active_epochs: self.dar.active,
            refresh_epochs: self.dar.refresh.clone(),
            keep_rounding: KeepRounding::CeilAtLeastOne,
            reset_previous_on_refresh: self.dar.reset_previous_on_refresh,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.train.epochs == 0 {
            return Err(cfg_err("train.epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(cfg_err("batch_size must be at least 1"));
        }
        if self.model.hidden.contains(&0) {
            return Err(cfg_err("model.hidden widths must be positive"));
        }
        self.data.validate()?;
        self.train.hyper.validate(self.train.epochs)?;
        if self.policy == PolicyKind::Dar {
            self.dar_config().validate()?;
        }
        Ok(())
    }

    /// Installs a named preset, scaled to `train.epochs`.
    ///
    /// `imagenet-default` keeps interval 2, keep rate 0.9 and active 10, uses
    /// warm-up `round(E/12)` and refreshes (and LR milestones) at the
    /// quarter points of the run; at E = 120 this is 10 / {30, 60, 90}.
    /// `desk` is a more aggressive schedule for short desk-scale runs:
    /// warm-up `round(E/10)`, interval 1, keep rate 0.8, active
    /// `max(1, round(E/5))`, one refresh at `round(E/2)`.
    pub fn apply_preset(&mut self, name: &str) -> Result<(), HarnessError> {
        let e = self.train.epochs;
        if e == 0 {
            return Err(cfg_err("train.epochs must be positive before applying a preset"));
        }
        let scaled = |num: usize, den: usize| (num as f64 * e as f64 / den as f64).round() as usize;
        match name {
            "imagenet-default" => {
                let warmup = scaled(10, 120);
                let quarters = quarter_points(e, warmup);
                self.policy = PolicyKind::Dar;
                self.dar = DarSection {
                    warmup,
                    interval: 2,
                    keep_rate: 0.9,
                    active: ActiveWindow::Epochs(10),
                    refresh: quarters.clone(),
                    reset_previous_on_refresh: true,
                };
                self.train.hyper.lr_milestones = quarters;
            }
            "desk" => {
                let warmup = scaled(1, 10);
                let refresh: Vec<usize> = [scaled(1, 2)].into_iter().filter(|&r| r > warmup && r <= e).collect();
                self.policy = PolicyKind::Dar;
                self.dar = DarSection {
                    warmup,
                    interval: 1,
                    keep_rate: 0.8,
                    active: ActiveWindow::Epochs(scaled(1, 5).max(1)),
                    refresh,
                    reset_previous_on_refresh: true,
                };
            }
            "uniform" => self.policy = PolicyKind::Uniform,
            "reweight" => self.policy = PolicyKind::Reweight,
            other => {
                return Err(cfg_err(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        }
        if self.name.is_none() {
            self.name = Some(name.to_string());
        }
        Ok(())
    }
}

fn quarter_points(e: usize, warmup: usize) -> Vec<usize> {
    let mut pts: Vec<usize> = (1..4)
        .map(|q| (q as f64 * e as f64 / 4.0).round() as usize)
        .filter(|&p| p > warmup && p <= e)
        .collect();
    pts.dedup();
    pts
}

fn cfg_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}
