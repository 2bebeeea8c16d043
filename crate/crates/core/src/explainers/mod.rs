//! Explanation producers: integrated gradients, checkpoint-gradient
//! influence, concept probes and synthetic reference explainers, plus the
//! encoding that turns any explanation into discriminator input.

mod concepts;
mod dump;
mod encode;
mod ig;
mod influence;
mod source;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use concepts::{
    concept_extract, fit_concept_probes, fit_logistic_probe, penultimate_features, Concept, ConceptProbes,
    ConceptSchema, LogisticProbe, ProbeConfig,
};
pub use dump::{decode_f32_base64, encode_f32_base64, DumpRecord};
pub use encode::{downsample, encode, Encoded, EncodingConfig, InfluenceEncoding};
pub use ig::{integrate_path, integrated_gradients, logit_input_gradients};
pub use influence::{tracin_influence, CandidateMeta, InfluenceIndex};
pub use source::{probe_partition, Explained, Explainer, RealExplainer, RealMethod, SyntheticExplainer};
pub use synthetic::{synthetic_explain, Family, Fidelity, ReferencePool, SyntheticContext, SyntheticExplainerSpec};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!("heatmap {height}x{width} with {} values", values.len())));
        }
        Ok(Heatmap { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Heatmap { height, width, values: vec![0.0; height * width] }
    }
}

/// One referenced training example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRef {
    /// Position in the model-training partition.
    pub index: usize,
    pub score: f64,
    pub label: usize,
    pub artifact: bool,
}

/// Top-k influential training examples, highest score first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSet {
    pub refs: Vec<InfluenceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Explanation {
    Heatmap(Heatmap),
    Influence(InfluenceSet),
    Concept(ConceptVector),
}

impl Explanation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Explanation::Heatmap(h) => {
                if h.values.len() != h.height * h.width {
                    return Err(Error::Shape("heatmap size mismatch".into()));
                }
                if !h.values.iter().all(|v| v.is_finite()) {
                    return Err(Error::Domain("heatmap has non-finite values".into()));
                }
            }
            Explanation::Influence(s) => {
                if s.refs.windows(2).any(|w| w[1].score > w[0].score) {
                    return Err(Error::Domain("influence scores increase with rank".into()));
                }
            }
            Explanation::Concept(c) => {
                if !c.values.iter().all(|v| (0.0..=1.0).contains(v)) {
                    return Err(Error::Domain("concept value outside [0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}
