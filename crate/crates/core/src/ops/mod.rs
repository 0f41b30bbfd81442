//! Forward and backward numeric kernels on [`Tensor`](crate::Tensor).

pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod parallel;
pub mod pool;

pub use conv::{
    conv2d, conv2d_reference, depthwise_conv2d, expand_separable, geometry, pointwise_conv2d, separable_conv2d,
    ConvKernel, ConvKind, Padding,
};
pub use elementwise::{
    activation, add, concat_channels, elementwise, hadamard, split_channels, sub, Activation, Elementwise,
};
pub use norm::{batch_moments, batchnorm_infer, batchnorm_train};
pub use parallel::{is_deterministic, set_deterministic};
pub use pool::maxpool2d;
