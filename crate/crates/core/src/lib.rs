//! Incremental extractive question answering with sliced recurrent readers.

pub mod data;
pub mod error;
pub mod harness;
pub mod layers;
pub mod metrics;
pub mod params;
pub mod scalar;
pub mod slicing;
pub mod stopping;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::{grad_check, Grads, Mask, Tape, Var};

pub type Tensor<T = f64> = tensor::Tensor<T>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
