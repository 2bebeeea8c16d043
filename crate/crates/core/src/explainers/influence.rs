//! TracIn-style influence from checkpoint gradients.
//!
//! score(z) = Σ_t η_t ⟨∇ℓ_t(z), ∇ℓ_t(query)⟩, with the query labeled by the
//! model's own prediction.

use super::{InfluenceRef, InfluenceSet};
use crate::error::{Error, Result};
use crate::numerics::{
    argmax, per_example_gradient, GradientScope, Head, ModelCheckpoint, ModelSpec, Parameters, Tensor,
};

const LN2: f64 = std::f64::consts::LN_2;

/// Metadata of one candidate training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateMeta {
    pub index: usize,
    pub label: usize,
    pub artifact: bool,
}

/// A loss gradient, either explicit or, for the head, as the outer product
/// `delta ⊗ [features, 1]`.
#[derive(Debug, Clone, PartialEq)]
enum Grad {
    Head { delta: Vec<f64>, features: Vec<f64> },
    Flat(Vec<f64>),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Grad {
    fn inner(&self, other: &Grad) -> f64 {
        match (self, other) {
            (Grad::Head { delta: da, features: fa }, Grad::Head { delta: db, features: fb }) => {
                dot(da, db) * (dot(fa, fb) + 1.0)
            }
            (Grad::Flat(a), Grad::Flat(b)) => dot(a, b),
            _ => unreachable!("gradients of one index share a representation"),
        }
    }
}

/// dLoss/dlogits in bits.
fn head_delta(head: Head, logits: &[f64], target: usize) -> Vec<f64> {
    match head {
        Head::Softmax { .. } => {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            let mut d: Vec<f64> = exp.iter().map(|e| e / sum / LN2).collect();
            d[target] -= 1.0 / LN2;
            d
        }
        Head::Sigmoid => vec![(crate::numerics::kernels::sigmoid(logits[0]) - target as f64) / LN2],
    }
}

fn gradients(
    spec: &ModelSpec,
    ckpt: &ModelCheckpoint,
    inputs: &[Vec<f64>],
    targets: &[usize],
    scope: &GradientScope,
) -> Result<Vec<Grad>> {
    if *scope == GradientScope::FinalDense {
        let g = spec.input;
        let mut out = Vec::with_capacity(inputs.len());
        for (chunk, tchunk) in inputs.chunks(64).zip(targets.chunks(64)) {
            let batch = Tensor::new(vec![chunk.len(), g.height, g.width, g.channels], chunk.concat())?;
            let (logits, feats) = spec.forward_with_features(&ckpt.params, &batch)?;
            for (r, &t) in tchunk.iter().enumerate() {
                out.push(Grad::Head {
                    delta: head_delta(spec.head, logits.row(r), t),
                    features: feats.row(r).to_vec(),
                });
            }
        }
        Ok(out)
    } else {
        inputs
            .iter()
            .zip(targets)
            .map(|(x, &t)| per_example_gradient(spec, ckpt, x, t, scope).map(Grad::Flat))
            .collect()
    }
}

/// Candidate gradients cached at every checkpoint of one model.
#[derive(Debug, Clone)]
pub struct InfluenceIndex {
    scope: GradientScope,
    rates: Vec<f64>,
    candidates: Vec<CandidateMeta>,
    grads: Vec<Vec<Grad>>,
}

impl InfluenceIndex {
    pub fn build(
        spec: &ModelSpec,
        checkpoints: &[ModelCheckpoint],
        candidates: &[CandidateMeta],
        inputs: &[Vec<f64>],
        scope: GradientScope,
    ) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::Precondition("influence needs at least one checkpoint".into()));
        }
        if candidates.is_empty() {
            return Err(Error::Precondition("influence candidate set is empty".into()));
        }
        if candidates.len() != inputs.len() {
            return Err(Error::Shape(format!("{} candidates with {} inputs", candidates.len(), inputs.len())));
        }
        // Spec errors (e.g. a scope naming no layer) surface here even for
        // the factored head path.
        per_example_gradient(spec, &checkpoints[0], &inputs[0], candidates[0].label, &scope)?;
        let targets: Vec<usize> = candidates.iter().map(|c| c.label).collect();
        let grads =
            checkpoints.iter().map(|c| gradients(spec, c, inputs, &targets, &scope)).collect::<Result<Vec<_>>>()?;
        Ok(InfluenceIndex {
            scope,
            rates: checkpoints.iter().map(|c| c.learning_rate).collect(),
            candidates: candidates.to_vec(),
            grads,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Influence score of every candidate on `query` labeled `target`.
    pub fn scores(
        &self,
        spec: &ModelSpec,
        checkpoints: &[ModelCheckpoint],
        query: &[f64],
        target: usize,
    ) -> Result<Vec<f64>> {
        if checkpoints.len() != self.grads.len() {
            return Err(Error::Precondition("checkpoint list differs from the indexed one".into()));
        }
        let mut scores = vec![0.0; self.candidates.len()];
        for ((ckpt, rate), cand) in checkpoints.iter().zip(&self.rates).zip(&self.grads) {
            let q = gradients(spec, ckpt, &[query.to_vec()], &[target], &self.scope)?.pop().expect("one query");
            for (s, g) in scores.iter_mut().zip(cand) {
                *s += rate * g.inner(&q);
            }
        }
        Ok(scores)
    }

    /// Top-k candidates for `query`, labeled with the prediction of `params`.
    /// Ties keep candidate order.
    pub fn explain(
        &self,
        spec: &ModelSpec,
        checkpoints: &[ModelCheckpoint],
        params: &Parameters,
        query: &[f64],
        k: usize,
    ) -> Result<InfluenceSet> {
        if k > self.candidates.len() {
            return Err(Error::Precondition(format!("k = {k} exceeds {} candidates", self.candidates.len())));
        }
        let g = spec.input;
        let logits = spec.forward(params, &Tensor::new(vec![1, g.height, g.width, g.channels], query.to_vec())?)?;
        let target = match spec.head {
            Head::Softmax { .. } => argmax(logits.data()),
            Head::Sigmoid => (logits.data()[0] >= 0.0) as usize,
        };
        let scores = self.scores(spec, checkpoints, query, target)?;
        Ok(top_k(&self.candidates, &scores, k))
    }
}

fn top_k(candidates: &[CandidateMeta], scores: &[f64], k: usize) -> InfluenceSet {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let refs = order[..k]
        .iter()
        .map(|&i| {
            let c = candidates[i];
            InfluenceRef { index: c.index, score: scores[i], label: c.label, artifact: c.artifact }
        })
        .collect();
    InfluenceSet { refs }
}

/// One-shot influence: indexes `candidates` and explains `query`.
pub fn tracin_influence(
    spec: &ModelSpec,
    checkpoints: &[ModelCheckpoint],
    candidates: &[CandidateMeta],
    inputs: &[Vec<f64>],
    query: &[f64],
    k: usize,
    scope: GradientScope,
) -> Result<InfluenceSet> {
    let index = InfluenceIndex::build(spec, checkpoints, candidates, inputs, scope)?;
    let last = checkpoints.last().expect("checked nonempty");
    index.explain(spec, checkpoints, &last.params, query, k)
}
