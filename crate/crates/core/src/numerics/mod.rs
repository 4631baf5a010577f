//! Dense double-precision tensors with reverse-mode differentiation.

mod graph;
pub mod kernels;
mod params;
mod tensor;

#[doc(hidden)]
pub use graph::GradFault;
pub use graph::{Graph, Var};
pub use kernels::{depthwise_conv1d, rms_norm, rope_rotate, softmax, RMS_EPS};
pub use params::{Bindings, ParamId, ParamStore};
pub use tensor::Tensor;
