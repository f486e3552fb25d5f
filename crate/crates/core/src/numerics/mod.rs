//! Dense f32 tensors, a reverse-mode tape, Adam, and checkpoint I/O.

mod adam;
pub mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use graph::{reverse_gradients, Gradients, Graph, NodeId, PadMode};
pub use params::ParamSet;
pub use tensor::Tensor;
