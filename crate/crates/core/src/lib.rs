//! Temporal binding of paired visual/tactile sequence encoders into the
//! attention layers of a small causal decoder.
//!
//! Per-timestep LSTM hidden states are injected through zero-initialized
//! gates into contiguous blocks of decoder layers (`Aware`), only the final
//! state is injected everywhere (`Even`), or single-frame features are used
//! (`Base`). The crate carries the autodiff substrate, a synthetic
//! tactile dataset, the two-stage training workflow and the ablation runner.

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fusion;
mod layers;
pub mod run;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
