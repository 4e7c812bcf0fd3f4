//! Multimodal emotion recognition from facial action units and raw
//! physiological signals, fused by a cross-attention transformer.

pub mod checkpoint;
pub mod data;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod fsutil;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases used by the command-line tools.
pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type Model = model::Mvp<f64>;
