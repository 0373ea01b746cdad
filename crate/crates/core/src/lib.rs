//! Fish image recognition toolkit.
//!
//! The processing chain is
//! decode → [`preprocess`] → [`segment`] → [`features`] → [`mlp`] → [`dtree`],
//! orchestrated by [`pipeline`]. [`synthgen`] renders labelled fish-like
//! images so the whole chain can be trained and evaluated without an
//! external corpus.
//!
//! The numerical learners ([`mlp::MlpModel`], [`dtree::DecisionTree`]) are
//! generic over a [`Scalar`]; the aliases below fix them to `f64`, which is
//! what the pipeline and model files use.

// Range checks are written `!(x >= lo)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dtree;
pub mod features;
pub mod imageio;
pub mod mlp;
mod moments;
pub mod pipeline;
pub mod preprocess;
mod scalar;
pub mod segment;
pub mod synthgen;

pub use scalar::Scalar;

pub use features::{FeatureVector, FEATURE_COUNT};
pub use imageio::{IndexedImage, ManifestEntry, Rgb, RgbImage, Split};
pub use pipeline::{EvalReport, TrainedBundle};

/// Double-precision perceptron, the pipeline's classifier.
pub type Mlp = mlp::MlpModel<f64>;
/// Single-precision perceptron.
pub type MlpF32 = mlp::MlpModel<f32>;
pub type TrainConfig = mlp::TrainConfig<f64>;
pub type Tree = dtree::DecisionTree<f64>;
pub type TreeF32 = dtree::DecisionTree<f32>;
