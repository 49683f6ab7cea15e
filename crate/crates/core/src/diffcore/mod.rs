//! Minimal differentiable computation: dense tensors, the forward ops the
//! network needs, a reverse-mode operation record, finite-difference
//! gradient checking and SGD with momentum.

mod gradcheck;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckOptions, GradCheckReport};
pub use ops::{conv2d, gap, linear, max_pool2, mse, relu, softmax, softmax_cross_entropy, temporal_pointwise};
pub use params::{glorot_uniform, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{Real, Tensor};
