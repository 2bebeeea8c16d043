//! Explainers as the discriminator sees them: a model and an input go in,
//! an encoded explanation comes out.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    concept_extract, encode, fit_concept_probes, integrated_gradients, synthetic_explain, CandidateMeta, ConceptProbes,
    ConceptSchema, Encoded, EncodingConfig, Explanation, Family, InfluenceIndex, ProbeConfig, SyntheticContext,
    SyntheticExplainerSpec,
};
use crate::data::{poison_view, Arm, DatasetBundle, LabeledExample};
use crate::error::{Error, Result};
use crate::numerics::GradientScope;
use crate::rng::{derive_seed, rng_for};
use crate::zoo::{training_view, ModelId, ZooConfig, ZooModel};

/// An encoded explanation plus, for influence sets, the referenced
/// model-training indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Explained {
    pub encoded: Encoded,
    pub references: Option<Vec<usize>>,
}

pub trait Explainer: Sync {
    fn id(&self) -> String;

    fn family(&self) -> Family;

    /// `key` seeds any randomness; deterministic explainers ignore it.
    fn explanation(&self, model: ModelId, example: &LabeledExample, key: u64) -> Result<Explanation>;

    fn encode(&self, model: ModelId, explanation: &Explanation) -> Result<Encoded>;

    fn explain(&self, model: ModelId, example: &LabeledExample, key: u64) -> Result<Explained> {
        let e = self.explanation(model, example, key)?;
        Ok(Explained { encoded: self.encode(model, &e)?, references: references(&e) })
    }
}

fn references(e: &Explanation) -> Option<Vec<usize>> {
    match e {
        Explanation::Influence(s) => Some(s.refs.iter().map(|r| r.index).collect()),
        _ => None,
    }
}

/// Synthetic explainer; model ids only contribute their arm.
pub struct SyntheticExplainer<'a> {
    pub spec: SyntheticExplainerSpec,
    pub context: SyntheticContext,
    pub encoding: EncodingConfig,
    /// Images behind the reference pool, for image-stack encoding.
    pub pool_images: Option<&'a [LabeledExample]>,
}

impl Explainer for SyntheticExplainer<'_> {
    fn id(&self) -> String {
        self.spec.id()
    }

    fn family(&self) -> Family {
        self.spec.family
    }

    fn explanation(&self, model: ModelId, example: &LabeledExample, key: u64) -> Result<Explanation> {
        synthetic_explain(&self.spec, &self.context, example, model.arm, &mut rng_for(key, &[]))
    }

    fn encode(&self, _model: ModelId, explanation: &Explanation) -> Result<Encoded> {
        encode(explanation, &self.encoding, self.pool_images)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RealMethod {
    IntegratedGradients { steps: usize },
    Influence { k: usize, scope: GradientScope, candidates: usize },
    Concepts { probe: ProbeConfig, probe_examples: usize },
}

impl RealMethod {
    pub fn family(&self) -> Family {
        match self {
            RealMethod::IntegratedGradients { .. } => Family::Heatmap,
            RealMethod::Influence { .. } => Family::Influence,
            RealMethod::Concepts { .. } => Family::Concept,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            RealMethod::IntegratedGradients { .. } => "integrated-gradients",
            RealMethod::Influence { .. } => "tracin",
            RealMethod::Concepts { .. } => "concept-probes",
        }
    }
}

struct Candidates {
    index: InfluenceIndex,
    meta: Vec<CandidateMeta>,
    /// Kept only for image-stack encoding.
    images: Option<Vec<LabeledExample>>,
}

struct Prepared {
    model: Arc<ZooModel>,
    candidates: Option<Candidates>,
    probes: Option<ConceptProbes>,
}

/// Integrated gradients, TracIn or concept probes over a set of zoo models.
pub struct RealExplainer {
    method: RealMethod,
    encoding: EncodingConfig,
    models: BTreeMap<ModelId, Prepared>,
}

/// Images for concept probes: a seeded subset of the model-training
/// partition where half of every class carries the artifact.
pub fn probe_partition(bundle: &DatasetBundle, size: usize, seed: u64) -> Result<Vec<LabeledExample>> {
    let view = poison_view(
        &bundle.model_train,
        Arm::Clean,
        bundle.spurious_class,
        bundle.class_count(),
        0.5,
        &bundle.artifact,
        derive_seed(seed, &[0x9b0b]),
    )?;
    let n = size.min(view.len());
    let mut idx = sample(&mut rng_for(seed, &[0x9b0c]), view.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| view[i].clone()).collect())
}

impl RealExplainer {
    /// Builds per-model state: influence indices over `candidates` seeded
    /// training examples, or concept probes.
    pub fn prepare(
        method: RealMethod,
        encoding: EncodingConfig,
        models: &[Arc<ZooModel>],
        bundle: &DatasetBundle,
        zoo: &ZooConfig,
        seed: u64,
    ) -> Result<Self> {
        let probe_set = match &method {
            RealMethod::Concepts { probe_examples, .. } => Some(probe_partition(bundle, *probe_examples, seed)?),
            _ => None,
        };
        let schema = ConceptSchema::for_classes(bundle.class_count());
        let prepared = models
            .par_iter()
            .map(|m| -> Result<(ModelId, Prepared)> {
                let tag = [m.id.arm.tag(), m.id.seed];
                let mut p = Prepared { model: m.clone(), candidates: None, probes: None };
                match &method {
                    RealMethod::IntegratedGradients { steps } => {
                        if *steps == 0 {
                            return Err(Error::Config("integrated gradients needs at least one step".into()));
                        }
                    }
                    RealMethod::Influence { candidates, scope, k } => {
                        let view = training_view(bundle, m.id, zoo, &bundle.artifact)?;
                        let n = (*candidates).min(view.len());
                        if *k > n {
                            return Err(Error::Config(format!("influence k = {k} exceeds {n} candidates")));
                        }
                        let mut idx = sample(&mut rng_for(seed, &[0xc4d, tag[0], tag[1]]), view.len(), n).into_vec();
                        idx.sort_unstable();
                        let meta: Vec<CandidateMeta> = idx
                            .iter()
                            .map(|&i| CandidateMeta { index: i, label: view[i].label, artifact: view[i].artifact })
                            .collect();
                        let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| view[i].image.to_f64()).collect();
                        let index = InfluenceIndex::build(&m.spec, &m.checkpoints, &meta, &inputs, scope.clone())?;
                        let images = (encoding.influence == super::InfluenceEncoding::ImageStack)
                            .then(|| idx.iter().map(|&i| view[i].clone()).collect());
                        p.candidates = Some(Candidates { index, meta, images });
                    }
                    RealMethod::Concepts { probe, .. } => {
                        let set = probe_set.as_deref().expect("built above");
                        let s = derive_seed(seed, &[0xc0c, tag[0], tag[1]]);
                        p.probes = Some(fit_concept_probes(&m.spec, &m.params, set, &schema, probe, s)?);
                    }
                }
                Ok((m.id, p))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(RealExplainer { method, encoding, models: prepared })
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.models.keys()
    }

    fn prepared_explanation(&self, model: ModelId, example: &LabeledExample) -> Result<Explanation> {
        let p = self
            .models
            .get(&model)
            .ok_or_else(|| Error::Precondition(format!("model {:?}-{} was not prepared", model.arm, model.seed)))?;
        let m = &p.model;
        let x = example.image.to_f64();
        match &self.method {
            RealMethod::IntegratedGradients { steps } => {
                let (h, _) = integrated_gradients(&m.spec, &m.params, &x, &vec![0.0; x.len()], *steps)?;
                Ok(Explanation::Heatmap(h))
            }
            RealMethod::Influence { k, .. } => {
                let c = p.candidates.as_ref().expect("prepared for influence");
                Ok(Explanation::Influence(c.index.explain(&m.spec, &m.checkpoints, &m.params, &x, *k)?))
            }
            RealMethod::Concepts { .. } => {
                let probes = p.probes.as_ref().expect("prepared for concepts");
                Ok(Explanation::Concept(concept_extract(&m.spec, &m.params, probes, &x)?))
            }
        }
    }
}

impl Explainer for RealExplainer {
    fn id(&self) -> String {
        self.method.id().to_string()
    }

    fn family(&self) -> Family {
        self.method.family()
    }

    fn explanation(&self, model: ModelId, example: &LabeledExample, _key: u64) -> Result<Explanation> {
        self.prepared_explanation(model, example)
    }

    fn encode(&self, model: ModelId, explanation: &Explanation) -> Result<Encoded> {
        let candidates = self.models.get(&model).and_then(|p| p.candidates.as_ref());
        match (explanation, candidates.and_then(|c| c.images.as_ref().map(|i| (&c.meta, i)))) {
            (Explanation::Influence(set), Some((meta, images))) => {
                // Image-stack pools hold only the candidates, so re-index.
                let mut local = set.clone();
                for r in &mut local.refs {
                    r.index = meta
                        .iter()
                        .position(|c| c.index == r.index)
                        .ok_or_else(|| Error::Domain(format!("reference {} is not a candidate", r.index)))?;
                }
                encode(&Explanation::Influence(local), &self.encoding, Some(images))
            }
            _ => encode(explanation, &self.encoding, None),
        }
    }
}
