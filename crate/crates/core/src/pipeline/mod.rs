//! Staged experiment runs. Each stage writes into its own directory under
//! the output root together with a manifest; a stage whose inputs and
//! outputs are unchanged is skipped on the next run.

mod config;
mod manifest;
mod report;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{DatasetConfig, ExperimentConfig, ExplainerConfig, SweepConfig, SyntheticModels, PRESETS};
pub use manifest::{
    completed, record, reset, sha256_file, sha256_hex, stage_key, DirLock, StageManifest, LOCK_FILE, MANIFEST_FILE,
};
pub use report::{emit_report, format_stat, to_csv, to_text, BaselineCells, EdsCells, Report, ReportRow, CSV_COLUMNS};

use crate::baselines::{baseline_metrics, BaselineReport, ReferenceContext};
use crate::data::{build_dataset, load_bundle, save_bundle, Arm, DatasetBundle, Subclass};
use crate::eds::{
    run_datasets, run_seed, score_run, DiscriminatorDataset, EdsReport, EdsSetup, ModelSet, ReportIds, Sample,
};
use crate::error::{Error, Result};
use crate::explainers::{
    decode_f32_base64, encode_f32_base64, ConceptSchema, DumpRecord, EncodingConfig, Explainer, InfluenceEncoding,
    RealExplainer, ReferencePool, SyntheticContext, SyntheticExplainer,
};
use crate::numerics::Geometry;
use crate::rng::derive_seed;
use crate::zoo::{
    intensity_sweep, load_population, save_population, split_population, train_population, ModelId, SweepTable,
    ZooModel,
};

/// Influence sets of synthetic explainers hold this many references.
pub const SYNTHETIC_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dataset,
    Zoo,
    Explanations,
    Eds,
    Baselines,
    Report,
    Sweep,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Dataset => "dataset",
            Stage::Zoo => "zoo",
            Stage::Explanations => "explanations",
            Stage::Eds => "eds",
            Stage::Baselines => "baselines",
            Stage::Report => "report",
            Stage::Sweep => "sweep",
        }
    }
}

/// Models on each side of the evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSplit {
    pub train: Vec<ModelId>,
    pub validation: Vec<ModelId>,
}

/// Which stages ran and which were skipped, in execution order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageLog {
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

/// Explainer with whatever state it borrows from the pipeline.
enum Handle<'a> {
    Synthetic(SyntheticExplainer<'a>),
    Real(&'a RealExplainer),
}

impl Handle<'_> {
    fn get(&self) -> &dyn Explainer {
        match self {
            Handle::Synthetic(s) => s,
            Handle::Real(r) => *r,
        }
    }
}

/// One experiment directory, held exclusively while the value lives.
pub struct Pipeline<'a> {
    config: &'a ExperimentConfig,
    out: PathBuf,
    _lock: DirLock,
    digests: BTreeMap<Stage, String>,
    bundle: Option<DatasetBundle>,
    models: Option<Vec<Arc<ZooModel>>>,
    split: Option<(ModelSet, ModelSet)>,
    real: BTreeMap<usize, RealExplainer>,
    pub log: StageLog,
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn dump_path(dir: &Path, explainer: &str, run: usize, split: &str) -> PathBuf {
    dir.join(explainer).join(format!("run-{run}-{split}.jsonl"))
}

fn write_dump(path: &Path, explainer: &str, run: usize, split: &str, data: &DiscriminatorDataset) -> Result<()> {
    let g = data.geometry;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for s in &data.samples {
        let rec = DumpRecord {
            explainer: explainer.to_string(),
            run,
            split: split.to_string(),
            model_seed: s.model.seed,
            arm: s.arm,
            subclass: s.subclass.code(),
            image: s.image,
            shape: [g.height, g.width, g.channels],
            encoded: encode_f32_base64(&s.x),
            references: s.references.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds a discriminator dataset from a dump.
pub fn read_dump(path: &Path) -> Result<DiscriminatorDataset> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut samples = Vec::new();
    let mut geometry = None;
    let mut offset = 0;
    for line in r.lines() {
        let line = line?;
        let len = line.len() + 1;
        if line.trim().is_empty() {
            offset += len;
            continue;
        }
        let rec: DumpRecord = serde_json::from_str(&line)?;
        let [h, w, c] = rec.shape;
        let g = *geometry.get_or_insert(Geometry::new(h, w, c));
        let x = decode_f32_base64(&rec.encoded)?;
        if g != Geometry::new(h, w, c) || x.len() != h * w * c {
            return Err(Error::Format { offset, detail: format!("record shape {:?} does not match", rec.shape) });
        }
        let subclass = Subclass::from_code(rec.subclass)
            .ok_or_else(|| Error::Format { offset, detail: format!("subclass code {}", rec.subclass) })?;
        samples.push(Sample {
            x,
            arm: rec.arm,
            subclass,
            model: ModelId { arm: rec.arm, seed: rec.model_seed },
            image: rec.image,
            references: rec.references,
        });
        offset += len;
    }
    let geometry =
        geometry.ok_or_else(|| Error::Format { offset: 0, detail: format!("{} is empty", path.display()) })?;
    Ok(DiscriminatorDataset { geometry, samples, skipped: 0 })
}

impl<'a> Pipeline<'a> {
    pub fn open(config: &'a ExperimentConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        let lock = DirLock::acquire(out)?;
        Ok(Pipeline {
            config,
            out: out.to_path_buf(),
            _lock: lock,
            digests: BTreeMap::new(),
            bundle: None,
            models: None,
            split: None,
            real: BTreeMap::new(),
            log: StageLog::default(),
        })
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn fail(&self, stage: Stage) -> impl Fn(Error) -> Error {
        let seed = self.config.seed;
        move |e| e.in_stage(stage.name(), seed)
    }

    /// Runs `body` unless the stage directory already holds outputs for `key`.
    fn run_stage(
        &mut self,
        stage: Stage,
        key: String,
        body: impl FnOnce(&mut Self, &Path) -> Result<()>,
    ) -> Result<String> {
        let dir = self.stage_dir(stage);
        if let Some(m) = completed(&dir, &key) {
            log::info!("{}: up to date", stage.name());
            self.log.skipped.push(stage);
            let d = m.digest();
            self.digests.insert(stage, d.clone());
            return Ok(d);
        }
        log::info!("{}: running", stage.name());
        let started = std::time::Instant::now();
        let fail = self.fail(stage);
        reset(&dir).map_err(&fail)?;
        body(self, &dir).map_err(&fail)?;
        let m = record(&dir, stage.name(), &key).map_err(&fail)?;
        log::info!("{}: done in {:.1?}", stage.name(), started.elapsed());
        self.log.ran.push(stage);
        let d = m.digest();
        self.digests.insert(stage, d.clone());
        Ok(d)
    }

    /// Runs `target` and everything it depends on.
    pub fn ensure(&mut self, target: Stage) -> Result<String> {
        if let Some(d) = self.digests.get(&target) {
            return Ok(d.clone());
        }
        match target {
            Stage::Dataset => self.dataset(),
            Stage::Zoo => self.zoo(),
            Stage::Explanations => self.explanations(),
            Stage::Eds => self.eds(),
            Stage::Baselines => self.baselines(),
            Stage::Report => self.report().map(|(d, _)| d),
            Stage::Sweep => self.sweep().map(|(d, _)| d),
        }
    }

    fn dataset(&mut self) -> Result<String> {
        let task = self.config.task();
        let key = stage_key("dataset", &[&json(&task)]);
        self.run_stage(Stage::Dataset, key, |p, dir| {
            let bundle = build_dataset(&task)?;
            save_bundle(&dir.join("bundle.edsd"), &bundle)?;
            log::info!(
                "dataset: {} model-training, {} discriminator-training, {} validation images",
                bundle.model_train.len(),
                bundle.discriminator_train.len(),
                bundle.validation.len()
            );
            p.bundle = None;
            Ok(())
        })
    }

    /// The dataset as stored on disk.
    pub fn bundle(&mut self) -> Result<&DatasetBundle> {
        self.ensure(Stage::Dataset)?;
        if self.bundle.is_none() {
            let path = self.stage_dir(Stage::Dataset).join("bundle.edsd");
            self.bundle = Some(load_bundle(&path).map_err(self.fail(Stage::Dataset))?);
        }
        Ok(self.bundle.as_ref().expect("loaded"))
    }

    fn zoo(&mut self) -> Result<String> {
        let dataset = self.ensure(Stage::Dataset)?;
        let c = self.config;
        let key = stage_key(
            "zoo",
            &[&dataset, &json(&c.zoo), &json(&c.synthetic_models), &c.needs_zoo().to_string(), &c.seed.to_string()],
        );
        if completed(&self.stage_dir(Stage::Zoo), &key).is_none() {
            self.bundle()?;
        }
        self.run_stage(Stage::Zoo, key, |p, dir| {
            p.models = None;
            p.split = None;
            let split = match &c.zoo {
                Some(z) if c.needs_zoo() => {
                    let bundle = p.bundle.as_ref().expect("loaded");
                    let mut all = Vec::new();
                    for arm in Arm::BOTH {
                        log::info!("zoo: training {} {arm:?} models", z.models_per_arm);
                        all.extend(train_population(bundle, arm, z)?);
                    }
                    let models_dir = dir.join("models");
                    save_population(&models_dir, &all, &sha256_hex(json(z).as_bytes())[..16])?;
                    // Reload so later stages see the stored (f32) parameters.
                    let stored = load_population(&models_dir)?;
                    let mut split = ModelSplit { train: Vec::new(), validation: Vec::new() };
                    for arm in Arm::BOTH {
                        let ids: Vec<ModelId> = stored.iter().filter(|m| m.id.arm == arm).map(|m| m.id).collect();
                        let (t, v) =
                            split_population(ids, z.reserve_count(), derive_seed(c.seed, &[0x5b1, arm.tag()]))?;
                        split.train.extend(t);
                        split.validation.extend(v);
                    }
                    split
                }
                _ => {
                    let s = c.synthetic_models;
                    let n = s.per_arm - s.reserve;
                    ModelSplit {
                        train: ModelSet::synthetic(n, 0).ids().into_iter().collect(),
                        validation: ModelSet::synthetic(s.reserve, n as u64).ids().into_iter().collect(),
                    }
                }
            };
            write_json(&dir.join("split.json"), &split)
        })
    }

    /// Training and validation model sets.
    pub fn split(&mut self) -> Result<(ModelSet, ModelSet)> {
        self.ensure(Stage::Zoo)?;
        if self.split.is_none() {
            let s: ModelSplit =
                read_json(&self.stage_dir(Stage::Zoo).join("split.json")).map_err(self.fail(Stage::Zoo))?;
            self.split = Some((ModelSet::new(s.train), ModelSet::new(s.validation)));
        }
        Ok(self.split.clone().expect("loaded"))
    }

    fn load_models(&mut self) -> Result<()> {
        self.ensure(Stage::Zoo)?;
        if self.models.is_none() {
            let dir = self.stage_dir(Stage::Zoo).join("models");
            let models = load_population(&dir).map_err(self.fail(Stage::Zoo))?;
            self.models = Some(models.into_iter().map(Arc::new).collect());
        }
        Ok(())
    }

    fn encoding(&self) -> EncodingConfig {
        EncodingConfig { influence: self.config.influence_encoding, class_count: self.config.dataset.classes.len() }
    }

    /// Loads whatever explainer `i` needs, reporting errors against `stage`.
    fn prepare_explainer(&mut self, i: usize, stage: Stage) -> Result<()> {
        self.bundle()?;
        let e = &self.config.explainers[i];
        let Some(method) = e.real_method() else { return Ok(()) };
        if self.real.contains_key(&i) {
            return Ok(());
        }
        self.load_models()?;
        let zoo = self.config.zoo.as_ref().expect("validated");
        log::info!("preparing {}", e.id());
        let prepared = RealExplainer::prepare(
            method,
            self.encoding(),
            self.models.as_ref().expect("loaded"),
            self.bundle.as_ref().expect("loaded"),
            zoo,
            derive_seed(self.config.seed, &[0xe7, i as u64]),
        )
        .map_err(self.fail(stage))?;
        self.real.insert(i, prepared);
        Ok(())
    }

    fn explainer(&self, i: usize) -> Result<Handle<'_>> {
        let e = &self.config.explainers[i];
        if let Some(r) = self.real.get(&i) {
            return Ok(Handle::Real(r));
        }
        let spec = e.synthetic_spec().ok_or_else(|| Error::Precondition(format!("{} was not prepared", e.id())))?;
        let bundle = self.bundle.as_ref().expect("loaded");
        let k = bundle.class_count();
        let context = SyntheticContext {
            artifact_region: bundle.artifact.region(bundle.geometry()),
            pool: ReferencePool::from_partition(&bundle.model_train, k, derive_seed(self.config.seed, &[0x9001]))?,
            k: SYNTHETIC_K,
            schema: ConceptSchema::for_classes(k),
            spurious_class: bundle.spurious_class,
        };
        let pool_images =
            (self.config.influence_encoding == InfluenceEncoding::ImageStack).then_some(bundle.model_train.as_slice());
        Ok(Handle::Synthetic(SyntheticExplainer { spec, context, encoding: self.encoding(), pool_images }))
    }

    fn explanations(&mut self) -> Result<String> {
        let zoo = self.ensure(Stage::Zoo)?;
        let dataset = self.ensure(Stage::Dataset)?;
        let c = self.config;
        let key = stage_key(
            "explanations",
            &[
                &dataset,
                &zoo,
                &json(&c.explainers),
                &json(&c.influence_encoding),
                &c.runs.to_string(),
                &c.seed.to_string(),
            ],
        );
        if completed(&self.stage_dir(Stage::Explanations), &key).is_none() {
            self.split()?;
            for i in 0..c.explainers.len() {
                self.prepare_explainer(i, Stage::Explanations)?;
            }
        }
        self.run_stage(Stage::Explanations, key, |p, dir| {
            let (train_models, validation_models) = p.split.clone().expect("loaded");
            let bundle = p.bundle.as_ref().expect("loaded");
            let setup = EdsSetup {
                train_models: &train_models,
                validation_models: &validation_models,
                train_partition: &bundle.discriminator_train,
                validation_partition: &bundle.validation,
            };
            for i in 0..c.explainers.len() {
                let handle = p.explainer(i)?;
                let ex = handle.get();
                let id = ex.id();
                std::fs::create_dir_all(dir.join(&id))?;
                for r in 0..c.runs {
                    let (train, validation) = run_datasets(&setup, ex, run_seed(c.seed, r))?;
                    log::info!("explanations: {id} run {r}: {} + {} samples", train.len(), validation.len());
                    write_dump(&dump_path(dir, &id, r, "train"), &id, r, "train", &train)?;
                    write_dump(&dump_path(dir, &id, r, "validation"), &id, r, "validation", &validation)?;
                }
            }
            Ok(())
        })
    }

    fn dataset_name(&self) -> String {
        json(&self.config.dataset.mode).trim_matches('"').to_string()
    }

    fn eds(&mut self) -> Result<String> {
        let explanations = self.ensure(Stage::Explanations)?;
        let c = self.config;
        let key = stage_key("eds", &[&explanations, &json(&c.discriminator)]);
        let source = self.stage_dir(Stage::Explanations);
        let dataset_name = self.dataset_name();
        self.run_stage(Stage::Eds, key, |_, dir| {
            for e in &c.explainers {
                let id = e.id();
                let mut runs = Vec::with_capacity(c.runs);
                let mut hash = String::new();
                for r in 0..c.runs {
                    let train = read_dump(&dump_path(&source, &id, r, "train"))?;
                    let validation = read_dump(&dump_path(&source, &id, r, "validation"))?;
                    let (result, h) = score_run(&train, &validation, &c.discriminator, run_seed(c.seed, r))?;
                    log::info!("eds: {id} run {r}: {:.3}", result.overall);
                    runs.push(result);
                    hash = h;
                }
                let ids = ReportIds {
                    explainer: id.clone(),
                    artifact: c.dataset.artifact.id().to_string(),
                    dataset: dataset_name.clone(),
                    discriminator: hash,
                };
                write_json(&dir.join(format!("{id}.json")), &EdsReport::from_runs(ids, runs)?)?;
            }
            Ok(())
        })
    }

    fn baselines(&mut self) -> Result<String> {
        let zoo = self.ensure(Stage::Zoo)?;
        let dataset = self.ensure(Stage::Dataset)?;
        let c = self.config;
        let key = stage_key("baselines", &[&dataset, &zoo, &json(&c.explainers), &c.seed.to_string()]);
        if completed(&self.stage_dir(Stage::Baselines), &key).is_none() {
            self.split()?;
            for i in 0..c.explainers.len() {
                self.prepare_explainer(i, Stage::Baselines)?;
            }
        }
        self.run_stage(Stage::Baselines, key, |p, dir| {
            let (_, validation_models) = p.split.clone().expect("loaded");
            let bundle = p.bundle.as_ref().expect("loaded");
            let ctx = ReferenceContext {
                artifact_region: bundle.artifact.region(bundle.geometry()),
                spurious_class: bundle.spurious_class,
                class_count: bundle.class_count(),
                schema: ConceptSchema::for_classes(bundle.class_count()),
            };
            for i in 0..c.explainers.len() {
                let handle = p.explainer(i)?;
                let ex = handle.get();
                let r = baseline_metrics(
                    ex,
                    validation_models.arm(Arm::Spurious),
                    validation_models.arm(Arm::Clean),
                    &bundle.validation,
                    &ctx,
                    derive_seed(c.seed, &[0xba5e, i as u64]),
                )?;
                log::info!("baselines: {}: kssd {:.3} ccm {:.3} fam {:.3}", r.explainer, r.kssd, r.ccm, r.fam);
                write_json(&dir.join(format!("{}.json", r.explainer)), &r)?;
            }
            Ok(())
        })
    }

    fn report(&mut self) -> Result<(String, Report)> {
        let eds = self.ensure(Stage::Eds)?;
        let baselines = self.ensure(Stage::Baselines)?;
        let key = stage_key("report", &[&eds, &baselines, &self.config.name]);
        let report = collect_report(self.config, &self.out)?;
        let r = report.clone();
        let d = self.run_stage(Stage::Report, key, move |_, dir| emit_report(&r, dir))?;
        Ok((d, report))
    }

    fn sweep(&mut self) -> Result<(String, SweepTable)> {
        let c = self.config;
        let (Some(sweep), Some(zoo)) = (&c.sweep, &c.zoo) else {
            return Err(Error::Config("the intensity sweep needs [sweep] and [zoo] sections".into()));
        };
        let dataset = self.ensure(Stage::Dataset)?;
        let key = stage_key("sweep", &[&dataset, &json(sweep), &json(zoo)]);
        if completed(&self.stage_dir(Stage::Sweep), &key).is_none() {
            self.bundle()?;
        }
        let d = self.run_stage(Stage::Sweep, key, |p, dir| {
            let bundle = p.bundle.as_ref().expect("loaded");
            let seeds: Vec<u64> = (0..sweep.seeds as u64).map(|i| zoo.base_seed + 10_000 + i).collect();
            let table = intensity_sweep(bundle, &sweep.grid, &seeds, Arm::Spurious, zoo)?;
            for row in &table.rows {
                log::info!("sweep: intensity {:.3}: mean flip rate {:.3}", row.intensity, row.mean_flip_rate);
            }
            write_json(&dir.join("sweep.json"), &table)
        })?;
        let table = read_json(&self.stage_dir(Stage::Sweep).join("sweep.json")).map_err(self.fail(Stage::Sweep))?;
        Ok((d, table))
    }
}

/// Builds report rows from whatever EDS and baseline results exist under `out`.
pub fn collect_report(config: &ExperimentConfig, out: &Path) -> Result<Report> {
    let mut rows = Vec::with_capacity(config.explainers.len());
    for e in &config.explainers {
        let id = e.id();
        let eds_path = out.join(Stage::Eds.name()).join(format!("{id}.json"));
        let base_path = out.join(Stage::Baselines.name()).join(format!("{id}.json"));
        let eds: Option<EdsReport> = if eds_path.exists() { Some(read_json(&eds_path)?) } else { None };
        let base: Option<BaselineReport> = if base_path.exists() { Some(read_json(&base_path)?) } else { None };
        rows.push(ReportRow {
            explainer: id,
            family: e.family(),
            fidelity: e.fidelity(),
            artifact: config.dataset.artifact.id().to_string(),
            eds: eds.as_ref().map(EdsCells::from),
            baselines: base.as_ref().map(BaselineCells::from),
        });
    }
    if rows.iter().all(|r| r.eds.is_none() && r.baselines.is_none()) {
        return Err(Error::Precondition(format!("no results under {}", out.display())));
    }
    Ok(Report {
        name: config.name.clone(),
        dataset: json(&config.dataset.mode).trim_matches('"').to_string(),
        runs: config.runs,
        rows,
    })
}

/// Runs every stage up to `target`.
pub fn run_pipeline(config: &ExperimentConfig, out: &Path, target: Stage) -> Result<StageLog> {
    let mut p = Pipeline::open(config, out)?;
    p.ensure(target)?;
    Ok(p.log)
}

/// Full pipeline; returns the report and the stage log.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<(Report, StageLog)> {
    let mut p = Pipeline::open(config, out)?;
    let (_, report) = p.report()?;
    Ok((report, p.log))
}

/// Trains the spurious arm at every grid intensity and records flip rates.
pub fn run_sweep(config: &ExperimentConfig, out: &Path) -> Result<SweepTable> {
    let mut p = Pipeline::open(config, out)?;
    p.sweep().map(|(_, t)| t)
}

/// Re-emits the report from existing stage outputs without running anything.
pub fn rebuild_report(config: &ExperimentConfig, out: &Path) -> Result<Report> {
    let _lock = DirLock::acquire(out)?;
    let report = collect_report(config, out)?;
    emit_report(&report, &out.join(Stage::Report.name()))?;
    Ok(report)
}
