//! Dual-encoder multimodal sarcasm detection with conditional cross-modal
//! self-attention, LoRA adaptation and a memory-enhanced streaming predictor.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the two precisions used in practice: `f32` for
//! training and inference, `f64` for finite-difference gradient checks.

pub mod data;
pub mod error;
pub mod harness;
pub mod mep;
pub mod model;
pub mod numerics;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;

pub type Model32 = model::InterClip<f32>;
pub type Model64 = model::InterClip<f64>;
