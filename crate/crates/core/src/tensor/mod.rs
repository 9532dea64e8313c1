//! Minimal dense tensors with reverse-mode differentiation in 64-bit floats.

mod array;
pub mod check;
pub mod checkpoint;
mod graph;
pub mod optim;
mod param;

pub use array::Tensor;
pub use graph::{
    Grads, Graph, NormStats, PoolKind, Var, BATCH_NORM_EPS, LAYER_NORM_EPS, STD_NORM_EPS,
};
pub use optim::{Optimizer, OptimizerKind};
pub use param::{ParamId, ParamKind, ParamStore, Parameter};

pub(crate) use array::dot;
