//! Reverse-mode differentiation, layers, optimizer and checkpoints.

pub mod checkpoint;
mod graph;
pub mod gradcheck;
pub mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{softmax, weighted_plane_sum, Gradients, Graph, Var};
pub use layers::{Conv2d, DaConv, Dense, DenseBlock, Init, ResBlock, Rrdb, LEAKY_SLOPE, RESIDUAL_SCALE};
pub use optim::{clip_grad_norm, cosine_lr, AdamState};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use tensor::Tensor;
