//! Explainers with known behavior: ideal, noisy and random variants of each
//! explanation family.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ConceptSchema, ConceptVector, Explanation, Heatmap, InfluenceRef, InfluenceSet};
use crate::data::{Arm, LabeledExample, Mask, Subclass};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Heatmap,
    Influence,
    Concept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    Ideal,
    Noisy,
    Random,
}

/// Noise of the noisy heatmap relative to the ideal map's range. At 0.5 the
/// convolutional discriminator averages the noise away and noisy heatmaps
/// score like ideal ones.
pub const NOISY_HEATMAP_SIGMA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExplainerSpec {
    pub family: Family,
    pub fidelity: Fidelity,
    /// Heatmaps: noise sigma relative to the ideal map's range. Influence
    /// and concepts: corruption probability.
    pub noise: f64,
}

impl SyntheticExplainerSpec {
    /// Default noise: none for ideal and 1 for random. Noisy heatmaps get
    /// σ = 5 × range, noisy influence and concepts ρ = 0.5.
    pub fn new(family: Family, fidelity: Fidelity) -> Self {
        let noise = match (fidelity, family) {
            (Fidelity::Ideal, _) => 0.0,
            (Fidelity::Noisy, Family::Heatmap) => NOISY_HEATMAP_SIGMA,
            (Fidelity::Noisy, _) => 0.5,
            (Fidelity::Random, _) => 1.0,
        };
        SyntheticExplainerSpec { family, fidelity, noise }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be finite and >= 0", self.noise)));
        }
        match self.fidelity {
            Fidelity::Ideal if self.noise != 0.0 => Err(Error::Config("ideal explainers take no noise".into())),
            Fidelity::Random if self.noise != 1.0 => Err(Error::Config("random explainers need noise 1".into())),
            _ if self.family != Family::Heatmap && self.noise > 1.0 => {
                Err(Error::Config(format!("corruption probability {} above 1", self.noise)))
            }
            _ => Ok(()),
        }
    }

    pub fn id(&self) -> String {
        let f = match self.family {
            Family::Heatmap => "heatmap",
            Family::Influence => "influence",
            Family::Concept => "concept",
        };
        let q = match self.fidelity {
            Fidelity::Ideal => "ideal",
            Fidelity::Noisy => "noisy",
            Fidelity::Random => "random",
        };
        format!("synthetic-{f}-{q}")
    }
}

/// Training examples that synthetic influence sets reference, with the
/// class-independent 50% artifact assignment of a clean view.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePool {
    pub labels: Vec<usize>,
    pub artifacts: Vec<bool>,
    cells: Vec<Vec<usize>>,
}

impl ReferencePool {
    pub fn new(labels: Vec<usize>, artifacts: Vec<bool>, class_count: usize) -> Result<Self> {
        if labels.len() != artifacts.len() {
            return Err(Error::Shape("labels and artifact flags differ in length".into()));
        }
        let mut cells = vec![Vec::new(); 2 * class_count];
        for (i, (&l, &a)) in labels.iter().zip(&artifacts).enumerate() {
            if l >= class_count {
                return Err(Error::Domain(format!("label {l} outside {class_count} classes")));
            }
            cells[2 * l + a as usize].push(i);
        }
        Ok(ReferencePool { labels, artifacts, cells })
    }

    /// Pool over `partition` where half of every class (seeded) carries the artifact.
    pub fn from_partition(partition: &[LabeledExample], class_count: usize, seed: u64) -> Result<Self> {
        let labels: Vec<usize> = partition.iter().map(|e| e.label).collect();
        let mut artifacts = vec![false; labels.len()];
        for c in 0..class_count {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            idx.shuffle(&mut rng_for(seed, &[0x9001, c as u64]));
            for &i in &idx[..idx.len() / 2] {
                artifacts[i] = true;
            }
        }
        Self::new(labels, artifacts, class_count)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn cell(&self, label: usize, artifact: bool) -> Result<&[usize]> {
        let c = &self.cells[2 * label + artifact as usize];
        if c.is_empty() {
            return Err(Error::Precondition(format!("no pool example with label {label}, artifact {artifact}")));
        }
        Ok(c)
    }

    fn reference(&self, index: usize, score: f64) -> InfluenceRef {
        InfluenceRef { index, score, label: self.labels[index], artifact: self.artifacts[index] }
    }
}

/// Everything a synthetic explainer needs besides the input.
#[derive(Debug, Clone)]
pub struct SyntheticContext {
    pub artifact_region: Mask,
    pub pool: ReferencePool,
    pub k: usize,
    pub schema: ConceptSchema,
    pub spurious_class: usize,
}

fn mask_heatmap(m: &Mask) -> Heatmap {
    Heatmap { height: m.height, width: m.width, values: m.to_f64() }
}

pub fn synthetic_explain<R: Rng>(
    spec: &SyntheticExplainerSpec,
    ctx: &SyntheticContext,
    example: &LabeledExample,
    arm: Arm,
    rng: &mut R,
) -> Result<Explanation> {
    spec.validate()?;
    if example.mask.is_empty() {
        return Err(Error::Precondition("example has no shape mask".into()));
    }
    let spurious = arm == Arm::Spurious;
    let shortcut = spurious && example.subclass != Subclass::NsNa;
    match spec.family {
        Family::Heatmap => {
            let mut h = if shortcut { mask_heatmap(&ctx.artifact_region) } else { mask_heatmap(&example.mask) };
            match spec.fidelity {
                Fidelity::Ideal => {}
                Fidelity::Noisy => {
                    let (lo, hi) =
                        h.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                    let sigma = spec.noise * (hi - lo);
                    if sigma > 0.0 {
                        let n = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
                        h.values.iter_mut().for_each(|v| *v += n.sample(rng));
                    }
                }
                Fidelity::Random => {
                    let n = Normal::new(0.0, 1.0).expect("unit normal");
                    h.values.iter_mut().for_each(|v| *v = n.sample(rng));
                }
            }
            Ok(Explanation::Heatmap(h))
        }
        Family::Influence => {
            let k = ctx.k;
            let cell = if shortcut {
                ctx.pool.cell(ctx.spurious_class, true)?
            } else {
                ctx.pool.cell(example.label, example.artifact)?
            };
            let refs = (0..k)
                .map(|r| {
                    let score = 1.0 - r as f64 / k as f64;
                    let index = if rng.gen_bool(spec.noise.min(1.0)) {
                        rng.gen_range(0..ctx.pool.len())
                    } else {
                        cell[rng.gen_range(0..cell.len())]
                    };
                    ctx.pool.reference(index, score)
                })
                .collect();
            Ok(Explanation::Influence(InfluenceSet { refs }))
        }
        Family::Concept => {
            let mut values = ctx.schema.truth(example.label, example.artifact);
            if !spurious {
                values[ctx.schema.artifact_position()] = 0.0;
            }
            for v in values.iter_mut() {
                if rng.gen_bool(spec.noise.min(1.0)) {
                    *v = rng.gen_bool(0.5) as u8 as f64;
                }
            }
            Ok(Explanation::Concept(ConceptVector { values }))
        }
    }
}
