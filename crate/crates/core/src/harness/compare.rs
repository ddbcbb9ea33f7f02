use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PolicyKind};
use super::run::{run_on, RunOutcome};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub policy: PolicyKind,
    pub cost_ratio: f64,
    pub final_accuracy: Option<f64>,
    /// Accuracy difference to the first row.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:<9} {:>8} {:>10} {:>9}", "run", "policy", "cost", "accuracy", "delta")?;
        for r in &self.rows {
            let acc = r.final_accuracy.map_or("n/a".to_string(), |a| format!("{:.2}", 100.0 * a));
            let delta = r.delta.map_or("n/a".to_string(), |d| format!("({:+.2})", 100.0 * d));
            writeln!(
                f,
                "{:<24} {:<9} {:>7.2}% {:>10} {:>9}",
                r.label,
                r.policy.to_string(),
                100.0 * r.cost_ratio,
                acc,
                delta
            )?;
        }
        Ok(())
    }
}

/// Runs every config on the same data split with the first config's seed.
/// Configs must share the data section and epoch count.
pub fn compare(cfgs: &[ExperimentConfig]) -> Result<(ComparisonTable, Vec<RunOutcome>), HarnessError> {
    if cfgs.len() < 2 {
        return Err(HarnessError::Compare("need at least two configs".into()));
    }
    let first = &cfgs[0];
    for (i, c) in cfgs.iter().enumerate().skip(1) {
        if c.data != first.data {
            return Err(HarnessError::Compare(format!(
                "config {i} ({}) uses a different dataset than config 0",
                c.label()
            )));
        }
        if c.train.epochs != first.train.epochs {
            return Err(HarnessError::Compare(format!(
                "config {i} ({}) trains {} epochs, config 0 trains {}",
                c.label(),
                c.train.epochs,
                first.train.epochs
            )));
        }
    }
    for c in cfgs {
        c.validate()?;
    }
    let seed = first.seed;
    let data = first.data.load()?;
    let (train, val) = data.split(first.data.validation_fraction, seed)?;

    let mut outcomes = Vec::with_capacity(cfgs.len());
    let mut rows: Vec<ComparisonRow> = Vec::with_capacity(cfgs.len());
    for c in cfgs {
        let mut c = c.clone();
        c.seed = seed;
        let out = run_on(&c, &train, &val)?;
        let acc = out.report.final_validation_accuracy;
        let base = rows.first().map_or(acc, |r| r.final_accuracy);
        rows.push(ComparisonRow {
            label: c.label(),
            policy: c.policy,
            cost_ratio: out.report.cost_ratio,
            final_accuracy: acc,
            delta: acc.zip(base).map(|(a, b)| a - b),
        });
        outcomes.push(out);
    }
    Ok((ComparisonTable { seed, rows }, outcomes))
}
