use serde::{Deserialize, Serialize};

use crate::data::{ArtifactSpec, LabeledExample};
use crate::error::{Error, Result};
use crate::numerics::{ModelSpec, Parameters, Tensor};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Minimum flip rate of a spurious model.
    pub tau_s: f64,
    /// Maximum flip rate of a clean model.
    pub tau_c: f64,
    pub a_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { tau_s: 0.9, tau_c: 0.05, a_min: 0.9 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_c && self.tau_c < self.tau_s && self.tau_s <= 1.0) {
            return Err(Error::Config(format!("need 0 <= tau_c < tau_s <= 1, got {} and {}", self.tau_c, self.tau_s)));
        }
        if !(0.0..=1.0).contains(&self.a_min) {
            return Err(Error::Config(format!("a_min {} outside [0, 1]", self.a_min)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Spurious,
    Clean,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpuriousnessReport {
    pub flip_rate: f64,
    /// Accuracy on artifact-free images.
    pub clean_accuracy: f64,
    /// Accuracy on the arm's own training distribution.
    pub task_accuracy: f64,
    pub verdict: Verdict,
}

/// Images used to judge a model.
pub struct VerificationSets<'a> {
    /// Artifact-free images outside the spurious class.
    pub probe: &'a [LabeledExample],
    /// Artifact-free images of every class.
    pub clean: &'a [LabeledExample],
    /// Images distributed like the arm's training view.
    pub task: &'a [LabeledExample],
}

const PREDICT_BATCH: usize = 64;

/// Predicted class of every example.
pub fn predict_examples(spec: &ModelSpec, params: &Parameters, examples: &[LabeledExample]) -> Result<Vec<usize>> {
    let g = spec.input;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(PREDICT_BATCH) {
        let mut buf = vec![0.0; chunk.len() * g.len()];
        for (slot, e) in buf.chunks_exact_mut(g.len()).zip(chunk) {
            e.image.write_f64(slot);
        }
        let batch = Tensor::new(vec![chunk.len(), g.height, g.width, g.channels], buf)?;
        out.extend(spec.predict(params, &batch)?);
    }
    Ok(out)
}

fn accuracy_of(spec: &ModelSpec, params: &Parameters, examples: &[LabeledExample]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let pred = predict_examples(spec, params, examples)?;
    Ok(pred.iter().zip(examples).filter(|(p, e)| **p == e.label).count() as f64 / examples.len() as f64)
}

/// Fraction of `probe` images whose prediction moves to the spurious class
/// once the artifact is added.
pub fn flip_rate(
    spec: &ModelSpec,
    params: &Parameters,
    probe: &[LabeledExample],
    artifact: &ArtifactSpec,
    spurious_class: usize,
) -> Result<f64> {
    if probe.is_empty() {
        return Err(Error::Precondition("empty probe set".into()));
    }
    if let Some(i) = probe.iter().position(|e| e.artifact) {
        return Err(Error::Precondition(format!("probe image {i} already carries the artifact")));
    }
    let before = predict_examples(spec, params, probe)?;
    let mut with = probe.to_vec();
    for (i, e) in with.iter_mut().enumerate() {
        artifact.apply(&mut e.image, derive_seed(0x9b0e, &[i as u64]))?;
        e.artifact = true;
    }
    let after = predict_examples(spec, params, &with)?;
    let flips = before.iter().zip(&after).filter(|(b, a)| **a == spurious_class && **b != spurious_class).count();
    Ok(flips as f64 / probe.len() as f64)
}

pub fn verify_spuriousness(
    spec: &ModelSpec,
    params: &Parameters,
    sets: &VerificationSets,
    artifact: &ArtifactSpec,
    spurious_class: usize,
    thresholds: &Thresholds,
) -> Result<SpuriousnessReport> {
    let flip = flip_rate(spec, params, sets.probe, artifact, spurious_class)?;
    let clean_accuracy = accuracy_of(spec, params, sets.clean)?;
    let task_accuracy = accuracy_of(spec, params, sets.task)?;
    let verdict = if flip >= thresholds.tau_s && task_accuracy >= thresholds.a_min {
        Verdict::Spurious
    } else if flip <= thresholds.tau_c && clean_accuracy >= thresholds.a_min {
        Verdict::Clean
    } else {
        Verdict::Rejected
    };
    Ok(SpuriousnessReport { flip_rate: flip, clean_accuracy, task_accuracy, verdict })
}
