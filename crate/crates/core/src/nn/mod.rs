//! A small CPU training toolkit: planar tensors, convolution with
//! hand-written backward passes, and the Adam optimizer.
//!
//! Everything is generic over [`Scalar`] so the same layers run in `f32`
//! for training and in `f64` for finite-difference gradient checks.

mod adam;
mod conv;
mod ops;
mod params;
mod tensor;

pub use adam::{lr_schedule, Adam};
pub use conv::{conv2d, conv2d_backward, ConvCache, ConvGeometry};
pub use ops::{
    l1_loss, leaky_relu, leaky_relu_backward, mse_to_target, pixel_shuffle,
    pixel_shuffle_backward, reflect_index, reflect_pad, reflect_pad_backward, relu,
    relu_backward, subsample, subsample_backward, LEAKY_SLOPE,
};
pub use params::{Grads, Param, ParamStore};
pub use tensor::{Scalar, Tensor};
