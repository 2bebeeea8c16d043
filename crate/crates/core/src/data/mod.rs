//! Procedural sprite datasets, artifact injection and the dataset file
//! format.

pub mod artifact;
pub mod dataset;
pub mod format;
pub mod raster;
pub mod sprite;

pub use artifact::{apply_artifact, ArtifactSpec, STRIPE_OFFSET};
pub use dataset::{
    build_dataset, label_artifact_information, poison_view, split_sizes, Arm, DatasetBundle, ExampleSet,
    LabeledExample, Subclass, TaskConfig,
};
pub use format::{decode_partition, deserialize_bundle, encode_partition, load_bundle, save_bundle, serialize_bundle};
pub use raster::{Image, Mask};
pub use sprite::{heart_implicit, render_sprite, sample_sprite, DatasetMode, SceneHues, Shape, SpriteSpec};
