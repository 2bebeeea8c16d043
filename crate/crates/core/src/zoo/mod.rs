//! Populations of spurious and clean task models.

mod population;
mod verify;

pub use population::{
    flip_rate_on, intensity_sweep, load_population, save_population, split_population, train_model, train_population,
    training_view, ManifestRecord, ModelId, SweepRow, SweepTable, ZooConfig, ZooModel,
};
pub use verify::{predict_examples, verify_spuriousness, SpuriousnessReport, Thresholds, Verdict, VerificationSets};
