//! Forward and analytic-backward kernels the network is composed from.

mod conv;
mod pointwise;
mod upsample;

pub use conv::{conv2d_backward, conv2d_backward_input, conv2d_forward, ConvGrads, ConvKernel};
pub use pointwise::{concat_channels, relu, relu_backward, relu_inplace, slice_channels, split_channels};
pub use upsample::{
    bilinear_upsample_x4, bilinear_upsample_x4_backward, depth_to_space_x4, space_to_depth_x4, SCALE,
};
