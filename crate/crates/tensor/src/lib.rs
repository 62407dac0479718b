//! Reverse-mode automatic differentiation over dense, row-major CPU tensors.
//!
//! The engine is tape based: every operation appends a node holding its value
//! and a closure that maps the output gradient onto its parents. Nodes are
//! created in topological order, so the backward pass is a single reverse
//! sweep. Kernels are single-threaded and deterministic.

mod conv;
pub mod gradcheck;
mod ops;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use conv::{conv2d_output_size, Conv2dSpec};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Session};
pub use scalar::Scalar;
pub use tape::{GradSink, Grads, Tape, Var};
pub use tensor::{ShapeError, Tensor};
