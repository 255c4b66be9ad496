//! Target sound detection workbench.
//!
//! Given a mixture recording and a reference clip of a sound of interest,
//! a conditional network summarises the reference into a fixed embedding and
//! a detection network predicts per-frame presence of that sound in the
//! mixture. This crate covers the whole loop: corpus synthesis, features,
//! the networks with their reverse-mode gradients, training stages and
//! segment-based scoring.

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
