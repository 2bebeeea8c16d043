//! The arm classifier and the loss/divergence relation it estimates.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{check_disjoint, DiscriminatorDataset};
use crate::data::Subclass;
use crate::error::{Error, Result};
use crate::numerics::{gather_batch, mean_loss, train, Geometry, ModelSpec, Parameters, TrainConfig, VecSet};
use crate::rng::rng_for;
use crate::zoo::ModelId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl DiscriminatorSpec {
    /// Five epochs of SGD at 0.01 with momentum 0.9.
    pub fn default_train(seed: u64) -> TrainConfig {
        TrainConfig { epochs: 5, checkpoint_every: 5, seed, ..TrainConfig::default() }
    }

    /// Convolutional for rasters, two-hidden-layer perceptron for vectors.
    pub fn for_geometry(geometry: Geometry, train: TrainConfig) -> Self {
        let model = if geometry.height > 1 {
            ModelSpec::raster_discriminator(geometry)
        } else {
            ModelSpec::vector_discriminator(geometry.width * geometry.channels)
        };
        DiscriminatorSpec { model, train }
    }

    /// Short hash of the architecture and training settings, seed excluded.
    pub fn hash(&self) -> String {
        let mut unseeded = self.clone();
        unseeded.train.seed = 0;
        let json = serde_json::to_vec(&unseeded).expect("spec serializes");
        hex::encode(&Sha256::digest(json)[..8])
    }
}

/// Cross-entropy loss ℓ in bits and the divergence it implies. For the
/// optimal discriminator ℓ = 1 − D_JS; any real one pays a non-negative
/// KL slack on top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossDecomposition {
    pub loss_bits: f64,
    pub js_estimate_bits: f64,
}

impl LossDecomposition {
    pub fn from_loss(loss_bits: f64) -> Self {
        LossDecomposition { loss_bits, js_estimate_bits: (1.0 - loss_bits).clamp(0.0, 1.0) }
    }

    /// ℓ − (1 − D_JS) for a known divergence.
    pub fn kl_slack(&self, js_bits: f64) -> f64 {
        self.loss_bits - (1.0 - js_bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub params: Parameters,
    /// Post-training mean loss on the training set, in bits.
    pub loss_bits: f64,
    /// Models whose explanations it was trained on.
    pub trained_on: BTreeSet<ModelId>,
}

fn as_numeric(e: Error) -> Error {
    match e {
        Error::Divergence { step, loss } => {
            Error::Numeric { step, detail: format!("discriminator diverged (loss {loss})") }
        }
        other => other,
    }
}

pub fn train_discriminator(dataset: &DiscriminatorDataset, spec: &DiscriminatorSpec) -> Result<Discriminator> {
    if dataset.is_empty() {
        return Err(Error::Precondition("empty discriminator dataset".into()));
    }
    if spec.model.input.len() != dataset.geometry.len() {
        return Err(Error::Shape(format!(
            "discriminator takes {:?}, dataset holds {:?}",
            spec.model.input, dataset.geometry
        )));
    }
    let out = train(&spec.model, dataset, &spec.train).map_err(as_numeric)?;
    let loss_bits = mean_loss(&spec.model, &out.params, dataset)?;
    Ok(Discriminator { spec: spec.clone(), params: out.params, loss_bits, trained_on: dataset.models() })
}

impl Discriminator {
    /// Spuriousness probability of every sample.
    pub fn probabilities(&self, dataset: &DiscriminatorDataset) -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..dataset.len()).collect();
        let mut out = Vec::with_capacity(dataset.len());
        for chunk in idx.chunks(256) {
            let (batch, _) = gather_batch(&self.spec.model, dataset, chunk)?;
            out.extend(self.spec.model.probabilities(&self.params, &batch)?.data().iter().copied());
        }
        Ok(out)
    }
}

/// Accuracy of one run, overall and per subclass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub overall: f64,
    /// Indexed by subclass code.
    pub subclass: [f64; 4],
    pub counts: [usize; 4],
    pub train_loss_bits: f64,
    /// Mean held-out loss on the validation samples.
    pub loss_bits: f64,
}

/// Scores `discriminator` on explanations from models it never saw.
pub fn evaluate_eds(discriminator: &Discriminator, validation: &DiscriminatorDataset) -> Result<RunResult> {
    check_disjoint(&discriminator.trained_on, &validation.models())?;
    if validation.is_empty() {
        return Err(Error::Precondition("empty validation dataset".into()));
    }
    let probs = discriminator.probabilities(validation)?;
    let mut correct = [0usize; 4];
    let mut counts = [0usize; 4];
    for (s, p) in validation.samples.iter().zip(&probs) {
        let c = s.subclass.code() as usize;
        counts[c] += 1;
        correct[c] += usize::from((*p >= 0.5) as usize == s.arm.label());
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Dataset(format!("no validation samples of subclass {}", Subclass::ALL[c].name())));
    }
    let total: usize = counts.iter().sum();
    Ok(RunResult {
        overall: correct.iter().sum::<usize>() as f64 / total as f64,
        subclass: std::array::from_fn(|c| correct[c] as f64 / counts[c] as f64),
        counts,
        train_loss_bits: discriminator.loss_bits,
        loss_bits: mean_loss(&discriminator.spec.model, &discriminator.params, validation)?,
    })
}

/// Trains a discriminator on an equal mixture of the two sample sets (70%)
/// and measures its loss on the rest.
pub fn estimate_js_divergence(
    samples0: &[Vec<f64>],
    samples1: &[Vec<f64>],
    spec: &DiscriminatorSpec,
) -> Result<LossDecomposition> {
    if samples0.is_empty() || samples1.is_empty() {
        return Err(Error::Precondition("both sample sets must be nonempty".into()));
    }
    let n = samples0.len().min(samples1.len());
    if n < 2 {
        return Err(Error::Precondition("need at least two samples per side".into()));
    }
    let width = spec.model.input.len();
    if samples0.iter().chain(samples1).any(|s| s.len() != width) {
        return Err(Error::Shape(format!("samples must have length {width}")));
    }
    let cut = ((n as f64 * 0.7).round() as usize).clamp(1, n - 1);
    let mut train_set = VecSet::default();
    let mut held = VecSet::default();
    for (label, side) in [samples0, samples1].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..side.len()).collect();
        idx.shuffle(&mut rng_for(spec.train.seed, &[0x15, label as u64]));
        for (j, &i) in idx[..n].iter().enumerate() {
            let set = if j < cut { &mut train_set } else { &mut held };
            set.inputs.push(side[i].clone());
            set.targets.push(label);
        }
    }
    let out = train(&spec.model, &train_set, &spec.train).map_err(as_numeric)?;
    Ok(LossDecomposition::from_loss(mean_loss(&spec.model, &out.params, &held)?))
}
