//! Dense tensors, recorded reverse-mode differentiation for small MLPs,
//! and the Adam optimizer.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod mlp;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointHeader, ParamEntry, CHECKPOINT_FORMAT};
pub use gradcheck::grad_check;
pub use graph::{Graph, NodeId};
pub use mlp::{Activation, Mlp, MlpSpec};
pub use params::ParamStore;
pub use tensor::TensorBuf;
