//! Dense arrays, parameter groups and reverse-mode differentiation for small
//! multilayer perceptrons. All arithmetic is `f64`.

mod graph;
mod mlp;
mod params;
mod tensor;

pub use graph::{Activation, Graph, Var};
pub use mlp::{forward_mlp, LayerSpec, MlpSpec};
pub use params::{GradientVector, GroupId, NamedTensor, ParamGroup};
pub use tensor::Tensor;

pub(crate) use params::dot;
