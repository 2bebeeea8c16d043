use std::path::Path;

use eds_core::pipeline::{rebuild_report, run_experiment, run_pipeline, DirLock, ExperimentConfig, Stage, LOCK_FILE};
use eds_core::Error;

const SMALL: &str = r#"
name = "small"
seed = 3
runs = 2

[dataset]
mode = "dsprites-like"
classes = ["heart", "ellipse"]
per_class = 500
artifact = { kind = "stripe", offset = 9, width = 2, fill = 1.0 }

[synthetic_models]
per_arm = 6
reserve = 2

[discriminator]
epochs = 2
checkpoint_every = 2

[[explainers]]
kind = "synthetic"
family = "concept"
fidelity = "ideal"

[[explainers]]
kind = "synthetic"
family = "influence"
fidelity = "random"
"#;

fn config() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

fn csv(out: &Path) -> String {
    std::fs::read_to_string(out.join("report/report.csv")).unwrap()
}

#[test]
fn rerun_skips_every_stage_and_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let c = config();
    let (report, log) = run_experiment(&c, dir.path()).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(log.skipped.is_empty());
    assert_eq!(log.ran.len(), 6);
    let first = csv(dir.path());
    let (_, again) = run_experiment(&c, dir.path()).unwrap();
    assert!(again.ran.is_empty(), "reran {:?}", again.ran);
    assert_eq!(csv(dir.path()), first);
    assert!(!dir.path().join(LOCK_FILE).exists());
}

#[test]
fn independent_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c = config();
    run_experiment(&c, a.path()).unwrap();
    run_experiment(&c, b.path()).unwrap();
    assert_eq!(csv(a.path()), csv(b.path()));
    for f in ["report.json", "report.txt"] {
        assert_eq!(
            std::fs::read(a.path().join("report").join(f)).unwrap(),
            std::fs::read(b.path().join("report").join(f)).unwrap()
        );
    }
}

#[test]
fn deleting_eds_outputs_reruns_only_eds() {
    let dir = tempfile::tempdir().unwrap();
    let c = config();
    run_experiment(&c, dir.path()).unwrap();
    let before = csv(dir.path());
    std::fs::remove_dir_all(dir.path().join("eds")).unwrap();
    let (_, log) = run_experiment(&c, dir.path()).unwrap();
    assert_eq!(log.ran, vec![Stage::Eds]);
    assert_eq!(csv(dir.path()), before);
}

#[test]
fn config_change_reruns_downstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config();
    run_experiment(&c, dir.path()).unwrap();
    c.discriminator.learning_rate = 0.02;
    let (_, log) = run_experiment(&c, dir.path()).unwrap();
    assert_eq!(log.ran, vec![Stage::Eds, Stage::Report]);
}

#[test]
fn partial_targets_and_report_rebuild() {
    let dir = tempfile::tempdir().unwrap();
    let c = config();
    let log = run_pipeline(&c, dir.path(), Stage::Baselines).unwrap();
    assert_eq!(log.ran, vec![Stage::Dataset, Stage::Zoo, Stage::Baselines]);
    // Baseline-only results leave the score cells empty.
    let report = rebuild_report(&c, dir.path()).unwrap();
    assert!(report.rows.iter().all(|r| r.eds.is_none() && r.baselines.is_some()));
    let line = csv(dir.path()).lines().nth(1).unwrap().to_string();
    assert!(line.contains(",,,,,"), "{line}");
}

#[test]
fn locked_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let _held = DirLock::acquire(dir.path()).unwrap();
    assert!(matches!(run_experiment(&config(), dir.path()), Err(Error::Precondition(_))));
}

#[test]
fn stage_failures_name_the_stage_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let c = config();
    run_pipeline(&c, dir.path(), Stage::Explanations).unwrap();
    // Corrupt a dump behind the manifest's back, then force the eds stage.
    let dump = dir.path().join("explanations/synthetic-concept-ideal/run-0-train.jsonl");
    std::fs::write(&dump, "not json\n").unwrap();
    let manifest = dir.path().join("explanations/stage.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut m: eds_core::pipeline::StageManifest = serde_json::from_str(&text).unwrap();
    m.outputs
        .insert("synthetic-concept-ideal/run-0-train.jsonl".into(), eds_core::pipeline::sha256_file(&dump).unwrap());
    std::fs::write(&manifest, serde_json::to_string(&m).unwrap()).unwrap();
    match run_pipeline(&c, dir.path(), Stage::Eds) {
        Err(Error::Stage { stage, seed, .. }) => assert_eq!((stage.as_str(), seed), ("eds", 3)),
        other => panic!("expected a stage error, got {other:?}"),
    }
}

#[test]
fn presets_load_by_name() {
    for name in ["table1-synthetic", "dsprites-desk", "shapes-desk"] {
        assert_eq!(ExperimentConfig::load(name).unwrap().name, name);
    }
}
