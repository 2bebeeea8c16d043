//! Mini-batch SGD with momentum, checkpointing and per-example gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::model::{Head, ModelSpec, Parameters};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Checkpoint after every `checkpoint_every` epochs.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::SgdMomentum,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 3,
            checkpoint_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.epochs > 0 && (self.checkpoint_every == 0 || self.checkpoint_every > self.epochs) {
            return Err(Error::Config(format!(
                "checkpoint cadence {} yields no checkpoint over {} epochs",
                self.checkpoint_every, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub params: Parameters,
    /// Number of optimizer updates applied so far.
    pub step: u64,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Training data as seen by the optimizer.
pub trait TrainSet: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes example `index` into `out` (length = model input size).
    fn write_input(&self, index: usize, out: &mut [f64]);

    /// Class index for softmax heads; 0/1 for sigmoid heads.
    fn target(&self, index: usize) -> usize;
}

/// Simple in-memory training set.
#[derive(Debug, Clone, Default)]
pub struct VecSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
}

impl TrainSet for VecSet {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn write_input(&self, index: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.inputs[index]);
    }

    fn target(&self, index: usize) -> usize {
        self.targets[index]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub checkpoints: Vec<ModelCheckpoint>,
    /// Mean training loss (bits) per epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Assembles examples `indices` into an input batch.
pub fn gather_batch(spec: &ModelSpec, data: &dyn TrainSet, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let g = spec.input;
    let len = g.len();
    let mut buf = vec![0.0; indices.len() * len];
    for (slot, &i) in buf.chunks_exact_mut(len).zip(indices) {
        data.write_input(i, slot);
    }
    let targets = indices.iter().map(|&i| data.target(i)).collect();
    Ok((Tensor::new(vec![indices.len(), g.height, g.width, g.channels], buf)?, targets))
}

/// Mean loss in bits and its gradient for every parameter tensor.
pub fn loss_and_gradients(
    spec: &ModelSpec,
    params: &Parameters,
    batch: Tensor,
    targets: &[usize],
) -> Result<(f64, Vec<Tensor>)> {
    let mut graph = Graph::new();
    let leaves = params.leaves(&mut graph);
    let x = graph.constant(batch);
    let logits = spec.forward_graph(&mut graph, &leaves, x)?;
    let loss = match spec.head {
        Head::Softmax { .. } => graph.softmax_xent_bits(logits, targets)?,
        Head::Sigmoid => {
            let t: Vec<f64> = targets.iter().map(|&y| y as f64).collect();
            graph.sigmoid_bce_bits(logits, &t)?
        }
    };
    let value = graph.value(loss)?.item();
    let grads = graph.backward(loss)?;
    let out = leaves.iter().map(|&v| grads.get(v)).collect::<Result<Vec<_>>>()?;
    Ok((value, out))
}

/// Mean loss in bits over the whole set, evaluated in chunks.
pub fn mean_loss(spec: &ModelSpec, params: &Parameters, data: &dyn TrainSet) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let mut total = 0.0;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(256) {
        let (batch, targets) = gather_batch(spec, data, chunk)?;
        let logits = spec.forward(params, &batch)?;
        total += loss_from_logits(spec, &logits, &targets)? * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

fn loss_from_logits(spec: &ModelSpec, logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = match spec.head {
        Head::Softmax { .. } => g.softmax_xent_bits(l, targets)?,
        Head::Sigmoid => {
            let t: Vec<f64> = targets.iter().map(|&y| y as f64).collect();
            g.sigmoid_bce_bits(l, &t)?
        }
    };
    Ok(g.value(loss)?.item())
}

/// Fraction of examples whose prediction matches the target.
pub fn accuracy(spec: &ModelSpec, params: &Parameters, data: &dyn TrainSet) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(256) {
        let (batch, targets) = gather_batch(spec, data, chunk)?;
        let pred = spec.predict(params, &batch)?;
        correct += pred.iter().zip(&targets).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / n as f64)
}

/// Trains from a seeded initialization. Each epoch visits a seeded
/// permutation of the data; a checkpoint is taken after every
/// `checkpoint_every` epochs.
pub fn train(spec: &ModelSpec, data: &dyn TrainSet, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let init = spec.init(config.seed)?;
    train_from(spec, init, data, config)
}

pub fn train_from(
    spec: &ModelSpec,
    mut params: Parameters,
    data: &dyn TrainSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    spec.check_params(&params)?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed0f_5a11);
    let mut velocity: Vec<Tensor> = params.entries.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut checkpoints = Vec::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0u64;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (batch, targets) = gather_batch(spec, data, chunk)?;
            let (loss, grads) = loss_and_gradients(spec, &params, batch, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: step as usize, loss });
            }
            sum += loss * chunk.len() as f64;
            for (((_, p), v), g) in params.entries.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vv = config.momentum * *vv + gv;
                    *pv -= config.learning_rate * *vv;
                }
            }
            step += 1;
            if !params.is_finite() {
                return Err(Error::Divergence { step: step as usize, loss: f64::NAN });
            }
        }
        epoch_losses.push(sum / data.len() as f64);
        if (epoch + 1) % config.checkpoint_every == 0 {
            checkpoints.push(ModelCheckpoint {
                params: params.clone(),
                step,
                learning_rate: config.learning_rate,
                seed: config.seed,
            });
        }
    }
    Ok(TrainOutcome { params, checkpoints, epoch_losses })
}

/// Which parameters a per-example gradient covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientScope {
    All,
    #[default]
    FinalDense,
    /// Weight and bias of one named layer (e.g. `dense6`).
    Layer(String),
}

impl GradientScope {
    fn selects(&self, name: &str) -> bool {
        let layer = name.split('.').next().unwrap_or(name);
        match self {
            GradientScope::All => true,
            GradientScope::FinalDense => layer == "head",
            GradientScope::Layer(l) => layer == l,
        }
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        if spec.param_shapes()?.iter().any(|p| self.selects(&p.name)) {
            Ok(())
        } else {
            Err(Error::Spec(format!("gradient scope {self:?} matches no layer")))
        }
    }
}

/// Flattened loss gradient (bits) of a single example, restricted to `scope`.
pub fn per_example_gradient(
    spec: &ModelSpec,
    checkpoint: &ModelCheckpoint,
    input: &[f64],
    target: usize,
    scope: &GradientScope,
) -> Result<Vec<f64>> {
    spec.check_params(&checkpoint.params)?;
    scope.check(spec)?;
    let g = spec.input;
    let batch = Tensor::new(vec![1, g.height, g.width, g.channels], input.to_vec())?;
    let (_, grads) = loss_and_gradients(spec, &checkpoint.params, batch, &[target])?;
    Ok(checkpoint
        .params
        .entries
        .iter()
        .zip(grads)
        .filter(|((name, _), _)| scope.selects(name))
        .flat_map(|(_, g)| g.into_data())
        .collect())
}

/// Closed-form head gradient for a softmax model, laid out like
/// [`per_example_gradient`] with [`GradientScope::FinalDense`]:
/// weight `[features, classes]` row-major followed by bias `[classes]`.
pub fn head_gradient(features: &[f64], probs: &[f64], target: usize) -> Vec<f64> {
    let k = probs.len();
    let scale = 1.0 / std::f64::consts::LN_2;
    let mut delta: Vec<f64> = probs.iter().map(|p| p * scale).collect();
    delta[target] -= scale;
    let mut out = Vec::with_capacity(features.len() * k + k);
    for &f in features {
        out.extend(delta.iter().map(|d| f * d));
    }
    out.extend_from_slice(&delta);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::model::Geometry;

    fn separable(n: usize) -> VecSet {
        let mut set = VecSet::default();
        for i in 0..n {
            let t = (i as f64 / n as f64) * 2.0 - 1.0;
            let y = usize::from(t > 0.0);
            let off = if y == 1 { 0.5 } else { -0.5 };
            set.inputs.push(vec![t + off, 0.3 * (i % 7) as f64 - 0.9]);
            set.targets.push(y);
        }
        set
    }

    fn logistic_spec() -> ModelSpec {
        ModelSpec { input: Geometry::new(1, 2, 1), layers: vec![], head: Head::Softmax { classes: 2 } }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let spec = logistic_spec();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train(&spec, &separable(20), &cfg).unwrap();
        assert_eq!(out.params, spec.init(cfg.seed).unwrap());
        assert!(out.checkpoints.is_empty());
    }

    #[test]
    fn checkpoints_follow_cadence_with_increasing_steps() {
        let spec = logistic_spec();
        let cfg = TrainConfig { epochs: 4, checkpoint_every: 2, batch_size: 8, ..TrainConfig::default() };
        let out = train(&spec, &separable(40), &cfg).unwrap();
        let steps: Vec<u64> = out.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![10, 20]);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { checkpoint_every: 4, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn divergence_names_step() {
        let spec = logistic_spec();
        let mut set = separable(16);
        set.inputs[3] = vec![f64::NAN, 0.0];
        let cfg = TrainConfig { batch_size: 4, ..TrainConfig::default() };
        assert!(matches!(train(&spec, &set, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn scope_without_layer_is_spec_error() {
        let spec = logistic_spec();
        let ckpt = ModelCheckpoint { params: spec.init(0).unwrap(), step: 1, learning_rate: 0.01, seed: 0 };
        let r = per_example_gradient(&spec, &ckpt, &[1.0, 2.0], 0, &GradientScope::Layer("dense9".into()));
        assert!(matches!(r, Err(Error::Spec(_))));
    }
}
