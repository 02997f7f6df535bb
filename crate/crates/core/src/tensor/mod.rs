//! Dense `f64` arrays and a reverse-mode differentiation tape.

mod array;
mod graph;
pub(crate) mod kernels;

pub use array::Tensor;
pub use graph::{softmax_rows, BatchStats, Binary, Graph, Padding, Unary, Var};
