//! Layer primitives with hand-derived backward passes.

mod activation;
mod batchnorm;
mod conv;
mod loss;
mod pool;

pub use activation::{relu, relu_backward, relu_backward_from_output, residual_add};
pub use batchnorm::{
    batchnorm2d_backward, batchnorm2d_forward, BatchNormCache, BatchNormGrads, BatchNormParams, Mode,
};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_extent, ConvGeometry, ConvGrads, ConvParams};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{adaptive_avgpool2d, adaptive_avgpool2d_backward, AvgPool};
