//! Tensors, reverse-mode autodiff and the SGD trainer used for task models
//! and discriminators.

pub mod checkpoint;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod tensor;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointSidecar};
pub use graph::{Gradients, Graph, Var};
pub use model::{argmax, Geometry, Head, Layer, ModelSpec, Parameters};
pub use tensor::Tensor;
pub use train::{
    accuracy, gather_batch, head_gradient, loss_and_gradients, mean_loss, per_example_gradient, train, train_from,
    GradientScope, ModelCheckpoint, Optimizer, TrainConfig, TrainOutcome, TrainSet, VecSet,
};
