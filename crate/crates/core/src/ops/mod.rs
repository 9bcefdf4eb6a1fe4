//! Forward and backward kernels for every layer type of the classifier.
//!
//! All functions are pure: inputs are borrowed immutably and fresh tensors are
//! returned. Where a kernel parallelizes internally, each output element is
//! still produced by exactly one task in a fixed order, so results are bitwise
//! identical to a sequential run.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod pool;

pub use activation::{
    cross_entropy, relu_backward, relu_backward_guided, relu_forward, softmax, softmax_cross_entropy,
};
pub use conv::{
    conv3d_backward, conv3d_backward_input, conv3d_backward_params, conv3d_forward, ConvGrads,
    ConvParams,
};
pub use dense::{dense_backward, dense_backward_input, dense_forward, DenseParams};
pub use pool::{maxpool3d_backward, maxpool3d_forward, Argmax, PoolParams};
