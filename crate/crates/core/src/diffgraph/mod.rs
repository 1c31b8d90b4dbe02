//! Minimal reverse-mode automatic differentiation over vectors and
//! matrices — the substrate every trainable module builds on.

mod graph;
mod params;
mod tensor;

pub use graph::{Graph, NodeId};
pub use params::{ParamId, ParamStore, CHECKPOINT_SCHEMA};
pub use tensor::Tensor;
