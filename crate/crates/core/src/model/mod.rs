//! The conditional network, the fusion operators and the strong/weak
//! detection network, plus their parameter state and checkpoints.

mod checkpoint;
mod config;
mod fusion;
mod network;
mod state;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use config::{Fusion, ModelConfig};
pub use fusion::{fuse_concat, fuse_multiply, project_embedding, project_frames};
pub use network::{
    conditional_forward, detection_forward, linear_softmax_pool, ConditionalEmbedding, ConditionalVars,
    DetectionOutput, DetectionVars, ForwardOptions, NetworkBuilder, Supervision,
};
pub use state::{ModelState, CONDITIONAL_PREFIX, DETECTION_PREFIX, STATE_VERSION};
