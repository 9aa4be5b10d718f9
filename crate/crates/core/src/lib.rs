//! Desk-scale point-cloud language model pipeline.
//!
//! The crate wires frozen, mutually aligned text/point encoders into a small
//! causal decoder through a trainable token-wise projector and LoRA adapters,
//! trains them with a three-stage text-then-point schedule, compresses point
//! tokens with a zero-parameter cross-attention pooler, and scores the result
//! with a generative-classification harness and the accuracy-to-3D-data-ratio
//! metric.

pub mod encoders;
pub mod error;
pub mod par;
pub mod pooling;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
