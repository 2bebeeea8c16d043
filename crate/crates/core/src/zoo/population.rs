use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::verify::{flip_rate, verify_spuriousness, SpuriousnessReport, Thresholds, Verdict, VerificationSets};
use crate::data::{poison_view, Arm, ArtifactSpec, DatasetBundle, ExampleSet, LabeledExample, Subclass};
use crate::error::{Error, Result};
use crate::numerics::{load_checkpoint, save_checkpoint, train, ModelCheckpoint, ModelSpec, Parameters, TrainConfig};
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZooConfig {
    pub models_per_arm: usize,
    /// Share of each arm held out for EDS validation.
    pub reserve_fraction: f64,
    pub base_seed: u64,
    pub train: TrainConfig,
    pub thresholds: Thresholds,
    pub retry_limit: usize,
    /// Injection rate of the spurious arm (on spurious-class images).
    pub spurious_rate: f64,
    /// Class-independent injection rate of the clean arm.
    pub clean_rate: f64,
}

impl Default for ZooConfig {
    fn default() -> Self {
        ZooConfig {
            models_per_arm: 20,
            reserve_fraction: 0.3,
            base_seed: 0,
            train: TrainConfig::default(),
            thresholds: Thresholds::default(),
            retry_limit: 3,
            spurious_rate: 1.0,
            clean_rate: 0.5,
        }
    }
}

impl ZooConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.thresholds.validate()?;
        if !(0.0..1.0).contains(&self.reserve_fraction) {
            return Err(Error::Config(format!("reserve fraction {} outside [0, 1)", self.reserve_fraction)));
        }
        if self.models_per_arm > 0 && self.reserve_count() >= self.models_per_arm {
            return Err(Error::Config("reserve must be smaller than the population".into()));
        }
        for r in [self.spurious_rate, self.clean_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("injection rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Validation models per arm: the reserve fraction of the population, rounded.
    pub fn reserve_count(&self) -> usize {
        (self.reserve_fraction * self.models_per_arm as f64).round() as usize
    }

    pub fn rate(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Spurious => self.spurious_rate,
            Arm::Clean => self.clean_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelId {
    pub arm: Arm,
    pub seed: u64,
}

/// A trained, verified task model.
#[derive(Debug, Clone, PartialEq)]
pub struct ZooModel {
    pub id: ModelId,
    pub spec: ModelSpec,
    pub params: Parameters,
    pub checkpoints: Vec<ModelCheckpoint>,
    pub report: SpuriousnessReport,
}

fn artifact_free(examples: &[LabeledExample]) -> Vec<LabeledExample> {
    examples.iter().filter(|e| !e.artifact).cloned().collect()
}

struct Sets {
    probe: Vec<LabeledExample>,
    clean: Vec<LabeledExample>,
    task: Vec<LabeledExample>,
}

impl Sets {
    /// Verification images come from the discriminator-training partition.
    fn new(bundle: &DatasetBundle, arm: Arm, rate: f64, artifact: &ArtifactSpec) -> Result<Self> {
        let clean = artifact_free(&bundle.discriminator_train);
        let probe = clean.iter().filter(|e| e.subclass == Subclass::NsNa).cloned().collect();
        let task = poison_view(&clean, arm, bundle.spurious_class, bundle.class_count(), rate, artifact, 0x7a5c)?;
        Ok(Sets { probe, clean, task })
    }

    fn borrow(&self) -> VerificationSets<'_> {
        VerificationSets { probe: &self.probe, clean: &self.clean, task: &self.task }
    }
}

fn train_and_verify(
    bundle: &DatasetBundle,
    arm: Arm,
    seed: u64,
    config: &ZooConfig,
    artifact: &ArtifactSpec,
    sets: &Sets,
) -> Result<ZooModel> {
    let spec = ModelSpec::default_classifier(bundle.geometry(), bundle.class_count());
    let view = training_view(bundle, ModelId { arm, seed }, config, artifact)?;
    let train_config = TrainConfig { seed: derive_seed(seed, &[arm.tag()]), ..config.train.clone() };
    let outcome = train(&spec, &ExampleSet(&view), &train_config)?;
    let report = verify_spuriousness(
        &spec,
        &outcome.params,
        &sets.borrow(),
        artifact,
        bundle.spurious_class,
        &config.thresholds,
    )?;
    Ok(ZooModel { id: ModelId { arm, seed }, spec, params: outcome.params, checkpoints: outcome.checkpoints, report })
}

/// The poisoned model-training partition seen by model `id`.
pub fn training_view(
    bundle: &DatasetBundle,
    id: ModelId,
    config: &ZooConfig,
    artifact: &ArtifactSpec,
) -> Result<Vec<LabeledExample>> {
    poison_view(
        &bundle.model_train,
        id.arm,
        bundle.spurious_class,
        bundle.class_count(),
        config.rate(id.arm),
        artifact,
        id.seed,
    )
}

/// Trains one model of `arm` with the given seed and verifies it, without
/// retries.
pub fn train_model(bundle: &DatasetBundle, arm: Arm, seed: u64, config: &ZooConfig) -> Result<ZooModel> {
    let sets = Sets::new(bundle, arm, config.rate(arm), &bundle.artifact)?;
    train_and_verify(bundle, arm, seed, config, &bundle.artifact, &sets)
}

fn wanted(arm: Arm) -> Verdict {
    match arm {
        Arm::Spurious => Verdict::Spurious,
        Arm::Clean => Verdict::Clean,
    }
}

/// Trains `models_per_arm` verified models. Model `i` starts from seed
/// `base_seed + i`; a model that fails verification (or diverges) is
/// retrained from seed `base_seed + i + attempt · models_per_arm`.
pub fn train_population(bundle: &DatasetBundle, arm: Arm, config: &ZooConfig) -> Result<Vec<ZooModel>> {
    config.validate()?;
    let n = config.models_per_arm;
    if n == 0 {
        return Ok(Vec::new());
    }
    let sets = Sets::new(bundle, arm, config.rate(arm), &bundle.artifact)?;
    // Inner `Err` carries the seeds of a member that never verified.
    let results = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut failed = Vec::new();
            for attempt in 0..=config.retry_limit {
                let seed = config.base_seed + (i + attempt * n) as u64;
                match train_and_verify(bundle, arm, seed, config, &bundle.artifact, &sets) {
                    Ok(m) if m.report.verdict == wanted(arm) => return Ok(Ok(m)),
                    Ok(_) | Err(Error::Divergence { .. }) => failed.push(seed),
                    Err(e) => return Err(e),
                }
            }
            Ok(Err(failed))
        })
        .collect::<Result<Vec<std::result::Result<ZooModel, Vec<u64>>>>>()?;
    let mut models = Vec::with_capacity(n);
    let mut failing = Vec::new();
    for r in results {
        match r {
            Ok(m) => models.push(m),
            Err(seeds) => failing.extend(seeds),
        }
    }
    if !failing.is_empty() {
        return Err(Error::Population { seeds: failing });
    }
    Ok(models)
}

/// Flip rate of a model on arbitrary artifact-free probe images.
pub fn flip_rate_on(
    model: &ZooModel,
    probe: &[LabeledExample],
    artifact: &ArtifactSpec,
    spurious_class: usize,
) -> Result<f64> {
    flip_rate(&model.spec, &model.params, probe, artifact, spurious_class)
}

/// Splits into (discriminator-training, validation) sets with `reserve`
/// members in validation, chosen by a seeded permutation.
pub fn split_population<T>(models: Vec<T>, reserve: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if reserve > 0 && reserve >= models.len() {
        return Err(Error::Config(format!("reserve {reserve} must be smaller than the population {}", models.len())));
    }
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.shuffle(&mut rng_for(seed, &[0x5911]));
    let mut is_val = vec![false; models.len()];
    for &i in &order[..reserve] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (m, v) in models.into_iter().zip(is_val) {
        if v {
            val.push(m);
        } else {
            train.push(m);
        }
    }
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub artifact: ArtifactSpec,
    pub intensity: f64,
    pub seeds: Vec<u64>,
    pub flip_rates: Vec<f64>,
    pub mean_flip_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub arm: Arm,
    pub rows: Vec<SweepRow>,
    /// Share of consecutive grid steps (sorted by intensity) where the mean
    /// flip rate does not decrease.
    pub nondecreasing_fraction: f64,
}

/// Trains one model per (grid point, seed) on the arm's view with that
/// artifact and records the flip rates.
pub fn intensity_sweep(
    bundle: &DatasetBundle,
    grid: &[ArtifactSpec],
    seeds: &[u64],
    arm: Arm,
    config: &ZooConfig,
) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::Config("intensity grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("intensity sweep needs at least one seed".into()));
    }
    config.validate()?;
    let mut rows = Vec::with_capacity(grid.len());
    for artifact in grid {
        artifact.validate(bundle.geometry())?;
        let sets = Sets::new(bundle, arm, config.rate(arm), artifact)?;
        let flip_rates = seeds
            .par_iter()
            .map(|&s| train_and_verify(bundle, arm, s, config, artifact, &sets).map(|m| m.report.flip_rate))
            .collect::<Result<Vec<_>>>()?;
        let mean_flip_rate = flip_rates.iter().sum::<f64>() / flip_rates.len() as f64;
        rows.push(SweepRow {
            artifact: *artifact,
            intensity: artifact.intensity(),
            seeds: seeds.to_vec(),
            flip_rates,
            mean_flip_rate,
        });
    }
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.intensity.total_cmp(&b.intensity));
    let steps = sorted.len().saturating_sub(1);
    let up = sorted.windows(2).filter(|w| w[1].mean_flip_rate >= w[0].mean_flip_rate).count();
    let nondecreasing_fraction = if steps == 0 { 1.0 } else { up as f64 / steps as f64 };
    Ok(SweepTable { arm, rows, nondecreasing_fraction })
}

/// One line of the zoo manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub seed: u64,
    pub arm: Arm,
    pub verdict: Verdict,
    pub flip_rate: f64,
    pub accuracy: f64,
    pub task_accuracy: f64,
    pub spec: ModelSpec,
    pub checkpoints: Vec<String>,
    pub params: String,
}

fn arm_name(arm: Arm) -> &'static str {
    match arm {
        Arm::Clean => "clean",
        Arm::Spurious => "spurious",
    }
}

/// Writes checkpoints and `zoo.jsonl` (one record per model) into `dir`.
pub fn save_population(dir: &Path, models: &[ZooModel], config_hash: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("zoo.jsonl"))?);
    for m in models {
        let stem = format!("{}-{}", arm_name(m.id.arm), m.id.seed);
        let mut checkpoints = Vec::new();
        for (j, c) in m.checkpoints.iter().enumerate() {
            let name = format!("{stem}-c{j}.edsc");
            save_checkpoint(&dir.join(&name), c, config_hash)?;
            checkpoints.push(name);
        }
        let params = match m.checkpoints.last() {
            Some(c) if c.params == m.params => checkpoints.last().cloned().expect("nonempty"),
            _ => {
                let name = format!("{stem}.edsc");
                let step = m.checkpoints.last().map_or(0, |c| c.step);
                let lr = m.checkpoints.last().map_or(0.0, |c| c.learning_rate);
                let seed = m.checkpoints.last().map_or(m.id.seed, |c| c.seed);
                let c = ModelCheckpoint { params: m.params.clone(), step, learning_rate: lr, seed };
                save_checkpoint(&dir.join(&name), &c, config_hash)?;
                name
            }
        };
        let rec = ManifestRecord {
            seed: m.id.seed,
            arm: m.id.arm,
            verdict: m.report.verdict,
            flip_rate: m.report.flip_rate,
            accuracy: m.report.clean_accuracy,
            task_accuracy: m.report.task_accuracy,
            spec: m.spec.clone(),
            checkpoints,
            params,
        };
        serde_json::to_writer(&mut manifest, &rec)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(())
}

pub fn load_population(dir: &Path) -> Result<Vec<ZooModel>> {
    let text = std::fs::read_to_string(dir.join("zoo.jsonl"))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: ManifestRecord = serde_json::from_str(line)?;
        let checkpoints = rec
            .checkpoints
            .iter()
            .map(|p| load_checkpoint(&dir.join(p)).map(|(c, _)| c))
            .collect::<Result<Vec<_>>>()?;
        let (final_ckpt, _) = load_checkpoint(&dir.join(&rec.params))?;
        rec.spec.check_params(&final_ckpt.params)?;
        out.push(ZooModel {
            id: ModelId { arm: rec.arm, seed: rec.seed },
            spec: rec.spec,
            params: final_ckpt.params,
            checkpoints,
            report: SpuriousnessReport {
                flip_rate: rec.flip_rate,
                clean_accuracy: rec.accuracy,
                task_accuracy: rec.task_accuracy,
                verdict: rec.verdict,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_proportional_and_disjoint() {
        let (a, b) = split_population((0..100).collect(), 30, 1).unwrap();
        assert_eq!((a.len(), b.len()), (70, 30));
        assert!(a.iter().all(|x| !b.contains(x)));
        let cfg = ZooConfig { models_per_arm: 20, ..ZooConfig::default() };
        let (a, b) = split_population((0..20).collect::<Vec<u32>>(), cfg.reserve_count(), 1).unwrap();
        assert_eq!((a.len(), b.len()), (14, 6));
        let (a, b) = split_population((0..5).collect::<Vec<u32>>(), 0, 1).unwrap();
        assert_eq!((a.len(), b.len()), (5, 0));
        assert_eq!(
            split_population((0..20).collect::<Vec<u32>>(), 6, 9).unwrap(),
            split_population((0..20).collect::<Vec<u32>>(), 6, 9).unwrap()
        );
    }
}
