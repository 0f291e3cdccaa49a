//! Differentiable-computation substrate.
//!
//! Everything trainable in this crate — the encoder, the contrastive losses —
//! is expressed as a [`Graph`] of primitive ops over named input and parameter
//! tensors. Forward evaluation is pure and deterministic; gradients come from
//! a reverse sweep over the recorded node list. The only contract the rest of
//! the crate relies on is the finite-difference check in [`fdcheck`].

mod fdcheck;
mod graph;
mod tensor;

pub use fdcheck::{finite_difference_check, FdOptions, GradReport, REL_ERR_FLOOR};
pub use graph::{Execution, Gradients, Graph, GraphBuilder, NodeId, TensorMap};
pub use tensor::{matmul, matmul_at, matmul_bt, transpose, Tensor};
