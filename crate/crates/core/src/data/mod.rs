//! Dataset loading, stratified splits, augmentation and batching.

mod augment;
mod batch;
mod manifest;
mod sample;
mod split;

pub use augment::{augment_sample, resize_bilinear, AugmentConfig, Augmentation};
pub use batch::{batch_iter, BatchIter};
pub use manifest::{Manifest, ManifestRecord, MANIFEST_FILE};
pub use sample::{Dataset, Sample};
pub use split::{holdout_split, stratified_kfold, Fold, FoldPlan, VALIDATION_FRACTION};
