//! Structural dialogue language modeling at desk scale.
//!
//! A from-scratch transformer encoder trained with utterance-order-restoration
//! and sentence-backbone-regularization objectives alongside masked-language
//! modeling and next-sentence prediction, in two regimes: domain-adaptive
//! post-training followed by fine-tuning, or single-stage multi-task
//! fine-tuning. Ships with a response-selection evaluation harness and a
//! deterministic synthetic corpus generator so every training signal can be
//! verified end to end on one CPU.

pub mod encoder;
pub mod eval;
pub mod gradcheck;
pub mod harness;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod text;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
