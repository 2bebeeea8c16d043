//! Discriminator datasets: one encoded explanation per image, from a model
//! drawn from a balanced arm assignment.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::data::{Arm, LabeledExample, Subclass};
use crate::error::{Error, Result};
use crate::explainers::{Explained, Explainer};
use crate::numerics::{Geometry, TrainSet};
use crate::rng::{derive_seed, rng_for};
use crate::zoo::ModelId;

/// Models available to each arm.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModelSet {
    pub clean: Vec<ModelId>,
    pub spurious: Vec<ModelId>,
}

impl ModelSet {
    pub fn new(ids: impl IntoIterator<Item = ModelId>) -> Self {
        let mut set = ModelSet::default();
        for id in ids {
            match id.arm {
                Arm::Clean => set.clean.push(id),
                Arm::Spurious => set.spurious.push(id),
            }
        }
        set
    }

    /// `n` placeholder ids per arm for synthetic explainers, seeds from `base`.
    pub fn synthetic(n: usize, base: u64) -> Self {
        ModelSet::new(Arm::BOTH.iter().flat_map(|&arm| (0..n as u64).map(move |i| ModelId { arm, seed: base + i })))
    }

    pub fn arm(&self, arm: Arm) -> &[ModelId] {
        match arm {
            Arm::Clean => &self.clean,
            Arm::Spurious => &self.spurious,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for arm in Arm::BOTH {
            let ids = self.arm(arm);
            if ids.is_empty() {
                return Err(Error::Precondition(format!("no {arm:?} models")));
            }
            if ids.iter().any(|id| id.arm != arm) {
                return Err(Error::Precondition(format!("{arm:?} list holds a model of the other arm")));
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> BTreeSet<ModelId> {
        self.clean.iter().chain(&self.spurious).copied().collect()
    }
}

/// Fails if any model appears in both sets.
pub fn check_disjoint(train: &BTreeSet<ModelId>, validation: &BTreeSet<ModelId>) -> Result<()> {
    let shared: Vec<String> = train.intersection(validation).map(|id| format!("{:?}-{}", id.arm, id.seed)).collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::Leakage(format!("models in both training and validation sets: {}", shared.join(", "))))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f32>,
    pub arm: Arm,
    pub subclass: Subclass,
    pub model: ModelId,
    /// Position of the source image in its partition.
    pub image: usize,
    pub references: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorDataset {
    pub geometry: Geometry,
    pub samples: Vec<Sample>,
    /// Images whose explanation failed.
    pub skipped: usize,
}

impl DiscriminatorDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn models(&self) -> BTreeSet<ModelId> {
        self.samples.iter().map(|s| s.model).collect()
    }

    pub fn arm_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for s in &self.samples {
            c[s.arm.label()] += 1;
        }
        c
    }
}

impl TrainSet for DiscriminatorDataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn write_input(&self, index: usize, out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(&self.samples[index].x) {
            *o = v as f64;
        }
    }

    fn target(&self, index: usize) -> usize {
        self.samples[index].arm.label()
    }
}

/// Arm per item: within every subclass half of the items go to each arm,
/// and odd leftovers go to whichever arm is behind overall (coin flip on a
/// tie), so both the global and the per-subclass counts differ by at most one.
pub fn balanced_arms(subclasses: &[Subclass], seed: u64) -> Vec<Arm> {
    let mut arms = vec![Arm::Clean; subclasses.len()];
    let mut lead: i64 = 0;
    let mut coin = rng_for(seed, &[0xa2]);
    for sc in Subclass::ALL {
        let mut idx: Vec<usize> = (0..subclasses.len()).filter(|&i| subclasses[i] == sc).collect();
        idx.shuffle(&mut rng_for(seed, &[0xa1, sc.code() as u64]));
        let half = idx.len() / 2;
        for &i in &idx[half..2 * half] {
            arms[i] = Arm::Spurious;
        }
        if idx.len() % 2 == 1 {
            let odd = match lead.cmp(&0) {
                std::cmp::Ordering::Greater => Arm::Clean,
                std::cmp::Ordering::Less => Arm::Spurious,
                std::cmp::Ordering::Equal if coin.gen_bool(0.5) => Arm::Spurious,
                std::cmp::Ordering::Equal => Arm::Clean,
            };
            arms[idx[2 * half]] = odd;
            lead += if odd == Arm::Spurious { 1 } else { -1 };
        }
    }
    arms
}

/// Largest tolerated share of failed explanations.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

/// Explains every image of `partition` once, with a model drawn uniformly
/// from its assigned arm.
pub fn make_discriminator_dataset(
    models: &ModelSet,
    partition: &[LabeledExample],
    explainer: &dyn Explainer,
    seed: u64,
) -> Result<DiscriminatorDataset> {
    models.validate()?;
    if partition.is_empty() {
        return Err(Error::Precondition("empty partition".into()));
    }
    let subclasses: Vec<Subclass> = partition.iter().map(|e| e.subclass).collect();
    let arms = balanced_arms(&subclasses, seed);
    let picks: Vec<ModelId> = arms
        .iter()
        .enumerate()
        .map(|(i, &arm)| {
            let pool = models.arm(arm);
            pool[rng_for(seed, &[0xa3, i as u64]).gen_range(0..pool.len())]
        })
        .collect();
    let results: Vec<Result<Explained>> = (0..partition.len())
        .into_par_iter()
        .map(|i| explainer.explain(picks[i], &partition[i], derive_seed(seed, &[0xa4, i as u64])))
        .collect();
    let mut samples = Vec::with_capacity(partition.len());
    let mut skipped = 0;
    let mut first_error = None;
    let mut geometry = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(e) => {
                let g = *geometry.get_or_insert(e.encoded.geometry);
                if g != e.encoded.geometry {
                    return Err(Error::Shape(format!(
                        "explanation {i} encodes to {:?}, earlier ones to {g:?}",
                        e.encoded.geometry
                    )));
                }
                samples.push(Sample {
                    x: e.encoded.values,
                    arm: arms[i],
                    subclass: subclasses[i],
                    model: picks[i],
                    image: i,
                    references: e.references,
                });
            }
            Err(e) => {
                skipped += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if skipped as f64 > MAX_SKIP_FRACTION * partition.len() as f64 || samples.is_empty() {
        return Err(Error::Dataset(format!(
            "{skipped} of {} explanations failed; first: {}",
            partition.len(),
            first_error.map(|e| e.to_string()).unwrap_or_default()
        )));
    }
    Ok(DiscriminatorDataset { geometry: geometry.expect("nonempty"), samples, skipped })
}
