//! Labeled examples, the 80/14/6 bundle and arm-specific poisoned views.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::artifact::ArtifactSpec;
use super::raster::{Image, Mask};
use super::sprite::{render_sprite, sample_sprite, DatasetMode, Shape};
use crate::error::{Error, Result};
use crate::numerics::{Geometry, TrainSet};
use crate::rng::{derive_seed, rng_for};

/// (spurious class?, artifact present?) quadrant of an input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subclass {
    #[serde(rename = "S/NA")]
    SNa = 0,
    #[serde(rename = "NS/NA")]
    NsNa = 1,
    #[serde(rename = "S/A")]
    SA = 2,
    #[serde(rename = "NS/A")]
    NsA = 3,
}

impl Subclass {
    pub const ALL: [Subclass; 4] = [Subclass::SNa, Subclass::NsNa, Subclass::SA, Subclass::NsA];

    pub fn of(label: usize, artifact: bool, spurious_class: usize) -> Self {
        match (label == spurious_class, artifact) {
            (true, false) => Subclass::SNa,
            (false, false) => Subclass::NsNa,
            (true, true) => Subclass::SA,
            (false, true) => Subclass::NsA,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Subclass::ALL.get(code as usize).copied()
    }

    pub fn is_spurious_class(self) -> bool {
        matches!(self, Subclass::SNa | Subclass::SA)
    }

    pub fn has_artifact(self) -> bool {
        matches!(self, Subclass::SA | Subclass::NsA)
    }

    pub fn name(self) -> &'static str {
        match self {
            Subclass::SNa => "S/NA",
            Subclass::NsNa => "NS/NA",
            Subclass::SA => "S/A",
            Subclass::NsA => "NS/A",
        }
    }
}

/// Which model population a view or model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Clean,
    Spurious,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Clean, Arm::Spurious];

    /// Discriminator target: 1 for spurious.
    pub fn label(self) -> usize {
        match self {
            Arm::Clean => 0,
            Arm::Spurious => 1,
        }
    }

    pub fn tag(self) -> u64 {
        self.label() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: Image,
    pub label: usize,
    pub artifact: bool,
    pub subclass: Subclass,
    pub mask: Mask,
}

impl LabeledExample {
    pub fn is_consistent(&self, spurious_class: usize) -> bool {
        self.subclass == Subclass::of(self.label, self.artifact, spurious_class)
    }

    fn inject(&mut self, artifact: &ArtifactSpec, key: u64, spurious_class: usize) -> Result<()> {
        artifact.apply(&mut self.image, key)?;
        self.artifact = true;
        self.subclass = Subclass::of(self.label, true, spurious_class);
        Ok(())
    }
}

/// Borrowed examples as optimizer input.
pub struct ExampleSet<'a>(pub &'a [LabeledExample]);

impl TrainSet for ExampleSet<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn write_input(&self, index: usize, out: &mut [f64]) {
        self.0[index].image.write_f64(out);
    }

    fn target(&self, index: usize) -> usize {
        self.0[index].label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub mode: DatasetMode,
    pub classes: Vec<Shape>,
    /// Images generated per class before splitting.
    pub per_class: usize,
    pub artifact: ArtifactSpec,
    pub spurious_class: usize,
    pub seed: u64,
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes.len())));
        }
        if self.classes.len() > u8::MAX as usize {
            return Err(Error::Config("at most 255 classes".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(Error::Config(format!("class {c:?} listed twice")));
            }
        }
        if self.per_class < 10 {
            return Err(Error::Config(format!("per-class count {} is below 10", self.per_class)));
        }
        if self.spurious_class >= self.classes.len() {
            return Err(Error::Config(format!(
                "spurious class {} out of range for {} classes",
                self.spurious_class,
                self.classes.len()
            )));
        }
        self.artifact.validate(self.mode.geometry())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub mode: DatasetMode,
    pub classes: Vec<Shape>,
    pub model_train: Vec<LabeledExample>,
    pub discriminator_train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub spurious_class: usize,
    pub seed: u64,
    pub artifact: ArtifactSpec,
}

impl DatasetBundle {
    pub fn geometry(&self) -> Geometry {
        self.mode.geometry()
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.model_train.len() + self.discriminator_train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Partition sizes for `n` examples: floor 80%, floor 14%, remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let model = n * 80 / 100;
    let disc = n * 14 / 100;
    (model, disc, n - model - disc)
}

const TAG_RENDER: u64 = 1;
const TAG_INJECT: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_VIEW: u64 = 4;

const PART_DISC: u64 = 1;
const PART_VAL: u64 = 2;

/// Generates, splits and tags a dataset. The model-training partition is
/// stored artifact-free; the other two carry the artifact on half of each
/// class.
pub fn build_dataset(config: &TaskConfig) -> Result<DatasetBundle> {
    config.validate()?;
    let geometry = config.mode.geometry();
    let k = config.classes.len();
    let mut per_class: Vec<Vec<LabeledExample>> = Vec::with_capacity(k);
    for (label, &shape) in config.classes.iter().enumerate() {
        let mut examples = Vec::with_capacity(config.per_class);
        for i in 0..config.per_class {
            let mut rng = rng_for(config.seed, &[TAG_RENDER, label as u64, i as u64]);
            let spec = sample_sprite(&mut rng, shape, config.mode);
            let (image, mask) = render_sprite(&spec, geometry)?;
            let subclass = Subclass::of(label, false, config.spurious_class);
            examples.push(LabeledExample { image, label, artifact: false, subclass, mask });
        }
        per_class.push(examples);
    }

    let mut order = Vec::with_capacity(k * config.per_class);
    let mut iters: Vec<_> = per_class.into_iter().map(|v| v.into_iter()).collect();
    loop {
        let before = order.len();
        for it in iters.iter_mut() {
            order.extend(it.next());
        }
        if order.len() == before {
            break;
        }
    }

    let (n_model, n_disc, n_val) = split_sizes(order.len());
    let mut rest = order.split_off(n_val);
    let mut validation = order;
    let model_train = rest.split_off(n_disc);
    let mut discriminator_train = rest;
    debug_assert_eq!(model_train.len(), n_model);

    for (part, examples) in [(PART_DISC, &mut discriminator_train), (PART_VAL, &mut validation)] {
        inject_half_per_class(examples, k, config, part)?;
    }

    Ok(DatasetBundle {
        mode: config.mode,
        classes: config.classes.clone(),
        model_train,
        discriminator_train,
        validation,
        spurious_class: config.spurious_class,
        seed: config.seed,
        artifact: config.artifact,
    })
}

fn inject_half_per_class(examples: &mut [LabeledExample], k: usize, config: &TaskConfig, part: u64) -> Result<()> {
    for class in 0..k {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label == class).collect();
        idx.shuffle(&mut rng_for(config.seed, &[TAG_INJECT, part, class as u64]));
        let take = idx.len() / 2;
        for &i in &idx[..take] {
            let key = derive_seed(config.seed, &[TAG_NOISE, part, i as u64]);
            examples[i].inject(&config.artifact, key, config.spurious_class)?;
        }
    }
    Ok(())
}

/// Training view of `partition` for one arm.
///
/// Spurious arm: the artifact goes on `round(rate · n_s)` spurious-class
/// images and nowhere else. Clean arm: it goes on `round(rate · n_c)`
/// images of every class `c`, so it carries no label information.
pub fn poison_view(
    partition: &[LabeledExample],
    arm: Arm,
    spurious_class: usize,
    class_count: usize,
    rate: f64,
    artifact: &ArtifactSpec,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("injection rate {rate} outside [0, 1]")));
    }
    if spurious_class >= class_count {
        return Err(Error::Config(format!("spurious class {spurious_class} out of range for {class_count} classes")));
    }
    let mut view = partition.to_vec();
    let classes: Vec<usize> = match arm {
        Arm::Spurious => vec![spurious_class],
        Arm::Clean => (0..class_count).collect(),
    };
    for class in classes {
        let mut idx: Vec<usize> = (0..view.len()).filter(|&i| view[i].label == class).collect();
        idx.shuffle(&mut rng_for(seed, &[TAG_VIEW, arm.tag(), class as u64]));
        let take = (rate * idx.len() as f64).round() as usize;
        for &i in &idx[..take] {
            let key = derive_seed(seed, &[TAG_NOISE, TAG_VIEW, i as u64]);
            view[i].inject(artifact, key, spurious_class)?;
        }
    }
    Ok(view)
}

/// Plug-in estimate (bits) of the mutual information between label and
/// artifact flag.
pub fn label_artifact_information(examples: &[LabeledExample], class_count: usize) -> f64 {
    let n = examples.len() as f64;
    if examples.is_empty() {
        return 0.0;
    }
    let mut joint = vec![[0.0f64; 2]; class_count];
    for e in examples {
        joint[e.label][e.artifact as usize] += 1.0;
    }
    let flag: [f64; 2] = [0, 1].map(|a| joint.iter().map(|r| r[a]).sum::<f64>() / n);
    let mut mi = 0.0;
    for row in &joint {
        let pl: f64 = row.iter().sum::<f64>() / n;
        for a in 0..2 {
            let p = row[a] / n;
            if p > 0.0 {
                mi += p * (p / (pl * flag[a])).log2();
            }
        }
    }
    mi.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(per_class: usize) -> TaskConfig {
        TaskConfig {
            mode: DatasetMode::DspritesLike,
            classes: vec![Shape::Heart, Shape::Ellipse],
            per_class,
            artifact: ArtifactSpec::default_stripe(),
            spurious_class: 0,
            seed: 9,
        }
    }

    #[test]
    fn split_of_thousand() {
        assert_eq!(split_sizes(1000), (800, 140, 60));
        let b = build_dataset(&config(500)).unwrap();
        assert_eq!((b.model_train.len(), b.discriminator_train.len(), b.validation.len()), (800, 140, 60));
        assert!(b.model_train.iter().all(|e| !e.artifact));
        let mut counts = [0; 4];
        for e in &b.validation {
            counts[e.subclass.code() as usize] += 1;
            assert!(e.is_consistent(0));
        }
        assert_eq!(counts, [15; 4]);
    }

    #[test]
    fn too_few_per_class_is_config_error() {
        assert!(matches!(build_dataset(&config(9)), Err(Error::Config(_))));
        let mut c = config(20);
        c.classes.truncate(1);
        assert!(matches!(build_dataset(&c), Err(Error::Config(_))));
    }

    #[test]
    fn views_follow_arm_semantics() {
        let b = build_dataset(&config(100)).unwrap();
        let a = ArtifactSpec::default_square();
        assert_eq!(poison_view(&b.model_train, Arm::Spurious, 0, 2, 0.0, &a, 1).unwrap(), b.model_train);
        let v = poison_view(&b.model_train, Arm::Spurious, 0, 2, 1.0, &a, 1).unwrap();
        assert!(v.iter().all(|e| e.artifact == (e.label == 0)));
        assert!(poison_view(&b.model_train, Arm::Spurious, 2, 2, 1.0, &a, 1).is_err());
        assert!(poison_view(&b.model_train, Arm::Clean, 0, 2, 1.5, &a, 1).is_err());
    }

    #[test]
    fn information_of_independent_and_copied_flags() {
        let b = build_dataset(&config(100)).unwrap();
        let mut v = b.model_train.clone();
        for e in &mut v {
            e.artifact = e.label == 1;
        }
        assert!((label_artifact_information(&v, 2) - 1.0).abs() < 1e-12);
        assert!(label_artifact_information(&b.validation, 2) < 1e-12);
    }
}
