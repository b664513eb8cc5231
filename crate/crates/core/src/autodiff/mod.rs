//! Minimal dense-tensor math with reverse-mode differentiation restricted
//! to designated leaf tensors. Working precision is `f32`; `f64` is the
//! verification mode used by gradient checks.

pub mod conv;
pub mod graph;
pub mod tensor;

pub use graph::{Graph, NodeId};
pub use tensor::{Scalar, Tensor};
