//! Tensors with reverse-mode gradients and the two model families built on
//! them.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod lstm;
pub mod model;
pub mod params;
pub mod tensor;
pub mod transformer;

pub use checkpoint::{Checkpoint, OptimizerState, TrainingMeta};
pub use graph::{Graph, Var};
pub use lstm::{LstmConfig, LstmState};
pub use model::{Decoder, Model, ModelConfig, ModelKind};
pub use params::{Bound, ParamSet};
pub use tensor::Tensor;
pub use transformer::TransformerConfig;

/// Standard deviation of the normal initializer for weights and embeddings.
pub const INIT_STD: f64 = 0.02;
