//! Minimal differentiable tensor engine used by the generators, discriminators and segmenter.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Grads, Graph, Var};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use tensor::{conv_out, gemm, Real, Tensor, Trans};
