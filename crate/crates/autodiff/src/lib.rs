//! Minimal dense-tensor computation graph with reverse-mode differentiation.
//!
//! Everything is `f64`. A [`Graph`] is a tape: each op evaluates eagerly and
//! is appended after its inputs, so [`Graph::backward`] is a single reverse
//! sweep. Parameters live in a [`ParamSet`] and are bound into a fresh graph
//! for every forward pass.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_HEADER};
pub use error::{AutodiffError, Result};
pub use graph::{Gradients, Graph, NodeId, OpKind};
pub use kernels::gemm;
pub use params::{Binding, ParamId, ParamSet};
pub use tensor::Tensor;
