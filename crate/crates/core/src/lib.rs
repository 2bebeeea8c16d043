//! Explainer divergence scoring.
//!
//! Trains populations of spurious and clean image classifiers, explains
//! their predictions, and measures how well a discriminator can tell the two
//! populations apart from the explanations alone. Similarity-based baseline
//! metrics (KSSD, CCM, FAM) are computed alongside for comparison.

pub mod baselines;
pub mod codec;
pub mod data;
pub mod eds;
pub mod error;
pub mod explainers;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod zoo;

pub use error::{Error, Result};
