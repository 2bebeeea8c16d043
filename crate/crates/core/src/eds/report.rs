//! Aggregation over runs and the serialized score report.

use serde::{Deserialize, Serialize};

use super::discriminator::{LossDecomposition, RunResult};
use crate::error::{Error, Result};

/// Mean, sample standard deviation and 95% half-width `1.96·std/√R`.
/// A single run has no spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
    pub ci95: Option<f64>,
}

impl Stat {
    pub fn single(value: f64) -> Self {
        Stat { mean: value, std: None, ci95: None }
    }
}

pub fn aggregate_runs(values: &[f64]) -> Result<Stat> {
    let r = values.len();
    if r < 2 {
        return Err(Error::Aggregation(format!("need at least 2 runs, got {r}")));
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    let std = var.sqrt();
    Ok(Stat { mean, std: Some(std), ci95: Some(1.96 * std / (r as f64).sqrt()) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdsReport {
    pub explainer: String,
    pub artifact: String,
    pub dataset: String,
    /// Hash of the discriminator architecture and training settings.
    pub discriminator: String,
    pub overall: Stat,
    pub s_na: Stat,
    pub ns_na: Stat,
    pub s_a: Stat,
    pub ns_a: Stat,
    /// Mean over runs of the held-out loss.
    #[serde(flatten)]
    pub loss: LossDecomposition,
    pub runs: Vec<RunResult>,
}

/// Ids carried into the report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportIds {
    pub explainer: String,
    pub artifact: String,
    pub dataset: String,
    pub discriminator: String,
}

impl EdsReport {
    pub fn from_runs(ids: ReportIds, runs: Vec<RunResult>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Aggregation("no runs".into()));
        }
        let pick = |f: &dyn Fn(&RunResult) -> f64| match runs.len() {
            1 => Ok(Stat::single(f(&runs[0]))),
            _ => aggregate_runs(&runs.iter().map(f).collect::<Vec<_>>()),
        };
        let loss = runs.iter().map(|r| r.loss_bits).sum::<f64>() / runs.len() as f64;
        Ok(EdsReport {
            overall: pick(&|r| r.overall)?,
            s_na: pick(&|r| r.subclass[0])?,
            ns_na: pick(&|r| r.subclass[1])?,
            s_a: pick(&|r| r.subclass[2])?,
            ns_a: pick(&|r| r.subclass[3])?,
            loss: LossDecomposition::from_loss(loss),
            explainer: ids.explainer,
            artifact: ids.artifact,
            dataset: ids.dataset,
            discriminator: ids.discriminator,
            runs,
        })
    }

    /// Subclass statistics in code order.
    pub fn subclasses(&self) -> [Stat; 4] {
        [self.s_na, self.ns_na, self.s_a, self.ns_a]
    }
}
