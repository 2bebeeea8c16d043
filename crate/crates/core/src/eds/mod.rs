//! Explainer divergence score: how well a discriminator tells spurious-arm
//! explanations from clean-arm ones on unseen models.

mod dataset;
mod discriminator;
mod report;

pub use dataset::{
    balanced_arms, check_disjoint, make_discriminator_dataset, DiscriminatorDataset, ModelSet, Sample,
    MAX_SKIP_FRACTION,
};
pub use discriminator::{
    estimate_js_divergence, evaluate_eds, train_discriminator, Discriminator, DiscriminatorSpec, LossDecomposition,
    RunResult,
};
pub use report::{aggregate_runs, EdsReport, ReportIds, Stat};

use crate::data::LabeledExample;
use crate::error::Result;
use crate::explainers::Explainer;
use crate::numerics::TrainConfig;
use crate::rng::derive_seed;

/// Models and images for the two sides of an evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EdsSetup<'a> {
    pub train_models: &'a ModelSet,
    pub validation_models: &'a ModelSet,
    pub train_partition: &'a [LabeledExample],
    pub validation_partition: &'a [LabeledExample],
}

/// Seed of run `r`.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    derive_seed(seed, &[0xed5, run as u64])
}

/// Training and validation datasets of one run.
pub fn run_datasets(
    setup: &EdsSetup<'_>,
    explainer: &dyn Explainer,
    run_seed: u64,
) -> Result<(DiscriminatorDataset, DiscriminatorDataset)> {
    check_disjoint(&setup.train_models.ids(), &setup.validation_models.ids())?;
    let train =
        make_discriminator_dataset(setup.train_models, setup.train_partition, explainer, derive_seed(run_seed, &[1]))?;
    let validation = make_discriminator_dataset(
        setup.validation_models,
        setup.validation_partition,
        explainer,
        derive_seed(run_seed, &[2]),
    )?;
    Ok((train, validation))
}

/// Trains a fresh discriminator on `train` and scores it on `validation`.
/// Returns the result with the discriminator spec hash.
pub fn score_run(
    train: &DiscriminatorDataset,
    validation: &DiscriminatorDataset,
    config: &TrainConfig,
    run_seed: u64,
) -> Result<(RunResult, String)> {
    let spec = DiscriminatorSpec::for_geometry(
        train.geometry,
        TrainConfig { seed: derive_seed(run_seed, &[3]), ..config.clone() },
    );
    let d = train_discriminator(train, &spec)?;
    Ok((evaluate_eds(&d, validation)?, spec.hash()))
}

/// `runs` full repetitions, each with fresh datasets and discriminator.
pub fn run_eds(
    setup: &EdsSetup<'_>,
    explainer: &dyn Explainer,
    config: &TrainConfig,
    runs: usize,
    seed: u64,
    artifact: &str,
    dataset: &str,
) -> Result<EdsReport> {
    let mut results = Vec::with_capacity(runs);
    let mut hash = String::new();
    for r in 0..runs {
        let s = run_seed(seed, r);
        let (train, validation) = run_datasets(setup, explainer, s)?;
        let (result, h) = score_run(&train, &validation, config, s)?;
        results.push(result);
        hash = h;
    }
    EdsReport::from_runs(
        ReportIds {
            explainer: explainer.id(),
            artifact: artifact.to_string(),
            dataset: dataset.to_string(),
            discriminator: hash,
        },
        results,
    )
}
