//! Data-free post-training quantization.
//!
//! The crate loads feed-forward networks, folds batch norm, equalizes
//! per-channel weight ranges across consecutive layers, absorbs high biases,
//! corrects the biased error introduced by weight quantization, and
//! simulates fixed-point inference in floating point.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the deployment type `f32`, with `*64` variants for
//! high-precision reference runs.

pub mod bias;
pub mod blob;
pub mod engine;
pub mod error;
pub mod graph;
pub mod pipeline;
pub mod quant;
pub mod scalar;
pub mod tensor;
pub mod transforms;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type LayerGraph = graph::LayerGraph<f32>;
pub type LayerGraph64 = graph::LayerGraph<f64>;
pub type PiecewiseLinear = graph::PiecewiseLinear<f32>;
pub type Dataset = engine::Dataset<f32>;
