//! The numerical substrate: tensors, deterministic RNG, matrix kernels, and
//! a reverse-mode differentiation tape.

pub mod gradcheck;
mod graph;
pub(crate) mod linalg;
mod rng;
mod tensor;

pub use graph::{Graph, NodeId};
pub use rng::Rng;
pub use tensor::Tensor;
