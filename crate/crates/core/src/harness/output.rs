//! Files written by the harness: metrics, reports, model parameters and
//! exported features. Every write goes to a temp file that is renamed into
//! place.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::RunOutcome;
use super::HarnessError;
use crate::datasets::Dataset;
use crate::model::{penultimate, ParamSet};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const MODEL_FILE: &str = "model.bin";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io(path))?;
    tmp.write_all(bytes).map_err(io(path))?;
    tmp.as_file().sync_all().map_err(io(path))?;
    tmp.persist(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Shape description stored next to a model's raw parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub format: String,
    pub layers: Vec<usize>,
    pub param_count: usize,
}

pub fn sidecar_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("json")
}

/// Saves parameters as little-endian `f64`s (layer by layer, weights then
/// bias) plus a JSON sidecar with the layer sizes.
pub fn save_params(params: &ParamSet, path: &Path) -> Result<(), HarnessError> {
    let flat = params.flatten();
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let sidecar = ModelSidecar {
        format: "f64-le".into(),
        layers: params.sizes(),
        param_count: flat.len(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(&sidecar_path(path), json.as_bytes())
}

pub fn load_params(path: &Path) -> Result<ParamSet, HarnessError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(io(&side))?;
    let sidecar: ModelSidecar =
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", side.display())))?;
    if sidecar.format != "f64-le" {
        return Err(HarnessError::Config(format!(
            "{}: unsupported format {:?}",
            side.display(),
            sidecar.format
        )));
    }
    let bytes = std::fs::read(path).map_err(io(path))?;
    if bytes.len() != sidecar.param_count * 8 {
        return Err(HarnessError::Config(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            sidecar.param_count * 8,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ParamSet::from_flat(&sidecar.layers, &values)?)
}

/// CSV text of `id,label,f0..` rows holding the activations that feed the
/// output layer (logits for a logistic model).
pub fn features_csv(params: &ParamSet, dataset: &Dataset) -> Result<String, HarnessError> {
    let feats = penultimate(params, &dataset.features)?;
    let width = feats.first().map_or(0, Vec::len);
    let mut out = String::from("id,label");
    for j in 0..width {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (id, (row, y)) in feats.iter().zip(&dataset.labels).enumerate() {
        let _ = write!(out, "{id},{y}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_features(params: &ParamSet, dataset: &Dataset, path: &Path) -> Result<(), HarnessError> {
    write_atomic(path, features_csv(params, dataset)?.as_bytes())
}

/// Writes metrics, report and model into `dir`, creating it if needed.
pub fn write_run(outcome: &RunOutcome, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    write_atomic(&dir.join(METRICS_FILE), outcome.report.metrics_jsonl().as_bytes())?;
    let report = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    write_atomic(&dir.join(REPORT_FILE), report.as_bytes())?;
    save_params(&outcome.params, &dir.join(MODEL_FILE))
}
