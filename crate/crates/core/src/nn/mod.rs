//! A small dense-tensor engine with tape-based reverse-mode differentiation,
//! the layers the predictor and vocoder are built from, AdamW, and a
//! checkpoint container.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod kernels;
pub mod layers;
mod optim;
mod param;
mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var};
pub use kernels::ConvGeometry;
pub use layers::Binder;
pub use optim::{clip_grad_norm, AdamW, AdamWConfig};
pub use param::{kaiming_uniform, normal, Param, ParamId, ParamStore};
pub use tensor::Tensor;
