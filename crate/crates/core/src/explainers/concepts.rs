//! Logistic concept probes on penultimate activations.

use serde::{Deserialize, Serialize};

use super::ConceptVector;
use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::numerics::kernels::sigmoid;
use crate::numerics::{train, Geometry, Head, ModelSpec, Parameters, Tensor, TrainConfig, VecSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "class", rename_all = "snake_case")]
pub enum Concept {
    /// The image belongs to this class.
    Class(usize),
    Artifact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSchema {
    pub concepts: Vec<Concept>,
}

impl ConceptSchema {
    /// Two classes get a single class concept (membership of class 0); more
    /// classes get one concept each. The artifact concept comes last.
    pub fn for_classes(class_count: usize) -> Self {
        let mut concepts: Vec<Concept> =
            if class_count == 2 { vec![Concept::Class(0)] } else { (0..class_count).map(Concept::Class).collect() };
        concepts.push(Concept::Artifact);
        ConceptSchema { concepts }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.concepts.iter().filter(|c| **c == Concept::Artifact).count();
        if n != 1 {
            return Err(Error::Config(format!("schema must hold exactly one artifact concept, found {n}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn artifact_position(&self) -> usize {
        self.concepts.iter().position(|c| *c == Concept::Artifact).expect("validated schema")
    }

    /// Ground-truth concept values of an image.
    pub fn truth(&self, label: usize, artifact: bool) -> Vec<f64> {
        self.concepts
            .iter()
            .map(|c| match c {
                Concept::Class(k) => (*k == label) as u8 as f64,
                Concept::Artifact => artifact as u8 as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { learning_rate: 0.1, momentum: 0.9, batch_size: 32, epochs: 30 }
    }
}

/// Logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl LogisticProbe {
    pub fn probability(&self, features: &[f64]) -> f64 {
        let z: f64 = features
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .zip(&self.weight)
            .map(|(((f, m), s), w)| (f - m) / s * w)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

pub fn fit_logistic_probe(
    features: &[Vec<f64>],
    targets: &[bool],
    config: &ProbeConfig,
    seed: u64,
) -> Result<LogisticProbe> {
    if features.is_empty() || features.len() != targets.len() {
        return Err(Error::Dataset(format!("{} feature rows with {} targets", features.len(), targets.len())));
    }
    let d = features[0].len();
    let n = features.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let set = VecSet {
        inputs: features
            .iter()
            .map(|f| f.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
            .collect(),
        targets: targets.iter().map(|&t| t as usize).collect(),
    };
    let spec = ModelSpec { input: Geometry::new(1, d, 1), layers: vec![], head: Head::Sigmoid };
    let tc = TrainConfig {
        learning_rate: config.learning_rate,
        momentum: config.momentum,
        batch_size: config.batch_size,
        epochs: config.epochs,
        checkpoint_every: config.epochs.max(1),
        seed,
        ..TrainConfig::default()
    };
    let out = train(&spec, &set, &tc).map_err(|e| match e {
        Error::Divergence { step, loss } => Error::Numeric { step, detail: format!("probe diverged (loss {loss})") },
        other => other,
    })?;
    Ok(LogisticProbe {
        mean,
        scale,
        weight: out.params.entries[0].1.data().to_vec(),
        bias: out.params.entries[1].1.data()[0],
    })
}

/// Activations entering the head for each example.
pub fn penultimate_features(spec: &ModelSpec, params: &Parameters, images: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let g = spec.input;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let batch = Tensor::new(vec![chunk.len(), g.height, g.width, g.channels], chunk.concat())?;
        let (_, feats) = spec.forward_with_features(params, &batch)?;
        out.extend((0..chunk.len()).map(|r| feats.row(r).to_vec()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptProbes {
    pub schema: ConceptSchema,
    pub probes: Vec<LogisticProbe>,
}

/// One independent probe per schema concept, trained on labels derived
/// from each example's class and artifact flag.
pub fn fit_concept_probes(
    spec: &ModelSpec,
    params: &Parameters,
    examples: &[LabeledExample],
    schema: &ConceptSchema,
    config: &ProbeConfig,
    seed: u64,
) -> Result<ConceptProbes> {
    schema.validate()?;
    let images: Vec<Vec<f64>> = examples.iter().map(|e| e.image.to_f64()).collect();
    let refs: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
    let feats = penultimate_features(spec, params, &refs)?;
    let truths: Vec<Vec<f64>> = examples.iter().map(|e| schema.truth(e.label, e.artifact)).collect();
    let probes = (0..schema.len())
        .map(|j| {
            let t: Vec<bool> = truths.iter().map(|v| v[j] > 0.5).collect();
            fit_logistic_probe(&feats, &t, config, seed.wrapping_add(j as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConceptProbes { schema: schema.clone(), probes })
}

pub fn concept_extract(
    spec: &ModelSpec,
    params: &Parameters,
    probes: &ConceptProbes,
    image: &[f64],
) -> Result<ConceptVector> {
    let f = penultimate_features(spec, params, &[image])?.pop().expect("one row");
    Ok(ConceptVector { values: probes.probes.iter().map(|p| p.probability(&f)).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn schema_layouts() {
        assert_eq!(ConceptSchema::for_classes(2).concepts, vec![Concept::Class(0), Concept::Artifact]);
        let s = ConceptSchema::for_classes(3);
        assert_eq!(s.len(), 4);
        assert_eq!(s.artifact_position(), 3);
        assert_eq!(s.truth(1, true), vec![0.0, 1.0, 0.0, 1.0]);
        assert!(ConceptSchema { concepts: vec![Concept::Class(0)] }.validate().is_err());
    }

    #[test]
    fn constant_features_give_half() {
        let f = vec![vec![1.0, 2.0]; 40];
        let t: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let p = fit_logistic_probe(&f, &t, &ProbeConfig::default(), 1).unwrap();
        assert!((p.probability(&[1.0, 2.0]) - 0.5).abs() <= 0.05);
    }

    #[test]
    fn linearly_encoded_concept_is_recovered() {
        let mut rng = crate::rng::rng_for(3, &[]);
        let mut draw = |n: usize| {
            let mut f = Vec::new();
            let mut t = Vec::new();
            for _ in 0..n {
                let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let s = x[0] - 0.5 * x[3];
                if s.abs() < 0.05 {
                    continue;
                }
                t.push(s > 0.0);
                f.push(x);
            }
            (f, t)
        };
        let (f, t) = draw(600);
        let (hf, ht) = draw(400);
        let p = fit_logistic_probe(&f, &t, &ProbeConfig::default(), 2).unwrap();
        let acc = hf.iter().zip(&ht).filter(|(x, y)| (p.probability(x) >= 0.5) == **y).count() as f64 / hf.len() as f64;
        assert!(acc >= 0.99, "held-out accuracy {acc}");
    }
}
