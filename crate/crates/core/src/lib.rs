//! Volumetric CNN classification with relevance attribution.
//!
//! A small dependency-light engine for 3-D convolutional classifiers over
//! `f64` tensors: forward and backward kernels, seeded SGD training, five
//! attribution methods targeting a class logit, atlas-based region reports,
//! and the file formats needed to move volumes and maps around.

pub mod atlas;
pub mod attribution;
pub mod error;
pub mod io;
pub mod model;
pub mod ops;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
