//! Zero-shot feature synthesis: a primitive cross-modal generator trained with
//! an MMD objective, feature disentanglement and relationship alignment, then
//! classifier retraining and generalized zero-shot evaluation.

pub mod align;
pub mod checkpoint;
pub mod data;
pub mod disentangle;
pub mod error;
pub mod generator;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
