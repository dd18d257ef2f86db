//! Proposed dilated residual network and the light ResNet baseline.

mod checkpoint;
mod config;
pub(crate) mod layers;
mod model;

pub use checkpoint::{
    config_hash, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, LoadMode, LoadOptions,
    LoadReport, SkipReason, StoredTensor, DTYPE_F32, DTYPE_F64, MAGIC, VERSION,
};
pub use config::{ModelConfig, ModelKind};
pub use layers::{BasicBlock, BlockKind, ConvBlock, GradTable, Role};
pub use model::{analytic_param_count, analytic_shapes, name_matches_prefix, ModelGraph, STEM_POOL};
