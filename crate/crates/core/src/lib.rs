//! A small deep-learning engine built around a sliding-window recurrent
//! network for x4 video super-resolution.
//!
//! Everything is hand-rolled on a dense rank-4 [`Tensor`]: 3x3 convolutions
//! with analytic backward passes, the recurrent model and its
//! backpropagation through time, Charbonnier/Adam training, bicubic
//! degradation, PSNR evaluation and INT8 post-training quantization.

pub mod ablation;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod quant;
pub mod recurrence;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{init_params, param_count, ModelConfig, Mode, Parameters, Variant};
pub use tensor::{Real, Shape, Tensor};
