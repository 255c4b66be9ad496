//! Minimal neural-network toolkit: a reverse-mode tape, the layers the
//! detection and conditional networks need, initialisers and Adam.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod init;
pub mod norm;
pub mod ops;
pub mod params;
pub mod pool;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use graph::{Gradients, Graph, Tensor, Var};
pub use params::ParamStore;
