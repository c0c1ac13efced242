//! Oriented 1D depthwise convolution engine: offset geometry, reference and
//! cache-blocked implementations, toy block assemblies and analysis oracles.
//!
//! Everything numeric is generic over the scalar type through [`Element`]
//! (f32/f64); the aliases below fix concrete dtypes.

// indexed loops mirror the tensor index math and read better than iterators here
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod analysis;
pub mod bench;
pub mod error;
pub mod model;
pub mod offsets;
pub mod optimized;
pub mod reference;
pub mod scalar;
pub mod tensor;
pub mod verify;

pub use error::{OrikError, Result};
pub use scalar::{Dtype, Element};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Kernel1D32 = reference::KernelWeights1D<f32>;
pub type Kernel1D64 = reference::KernelWeights1D<f64>;
pub type Kernel2D32 = reference::KernelWeights2D<f32>;
pub type Kernel2D64 = reference::KernelWeights2D<f64>;
pub type Pointwise32 = reference::PointwiseWeights<f32>;
pub type Pointwise64 = reference::PointwiseWeights<f64>;
pub type Network32 = model::Network<f32>;
pub type Network64 = model::Network<f64>;
