//! Training and evaluation stack for 4-class pit-pattern classification of
//! tactile images, with a procedural generator of synthetic tactile images.
//!
//! Module map:
//! - [`tensor`], [`ops`]: dense tensors and layer primitives with exact gradients
//! - [`network`]: the dilated residual model, the light ResNet baseline, checkpoints
//! - [`optim`]: AdaBound
//! - [`phantom`]: heightmap synthesis, contact masking, photometric rendering
//! - [`data`]: manifests, stratified folds, augmentation, batching
//! - [`metrics`]: confusion matrices, macro metrics, AUC, reports
//! - [`train`]: training/evaluation/cross-validation runs
//! - [`gradcheck`]: finite-difference gradient checks

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod optim;
pub mod phantom;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
