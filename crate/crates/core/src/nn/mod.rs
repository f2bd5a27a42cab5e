//! Minimal differentiable tensor engine: just enough for convolutional
//! U-Nets with attention in one to three spatial dimensions.

mod gemm;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gemm::gemm;
pub use graph::{Activation, ConvGeom, Graph, Var};
pub use optim::{clip_global_norm, Adam};
pub use params::{uniform_fan_in, ParamId, ParamStore};
pub use tensor::Tensor;
