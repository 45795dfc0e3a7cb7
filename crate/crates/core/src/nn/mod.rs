//! From-scratch sequence classifier: stacked LSTM layers over matrix rows, a
//! ReLU dense head with inverted dropout, softmax output, cross-entropy loss,
//! Adam, and full backpropagation through time.
//!
//! Everything is generic over the float width. Training runs in `f32`; the
//! `f64` instantiation exists for finite-difference gradient checks.

mod adam;
mod checkpoint;
mod config;
mod kernels;
mod model;
mod train;

use std::io;

use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, RngState, DIDC_MAGIC, DIDC_VERSION};
pub use config::{AdamConfig, ModelConfig, Variant, DEEP_HEAD, SHALLOW_HEAD};
pub use model::{argmax, dropout_rng, lstm_forward, softmax, Gradients, LstmParams, Mode, Model, Tensor};
pub use train::{train, EpochStats, History, TrainOutcome};

pub trait Scalar: num_traits::Float + std::fmt::Debug + Default + Send + Sync + 'static {
    /// Lossy conversion from an `f64` constant.
    fn c(v: f64) -> Self;
}

impl Scalar for f32 {
    fn c(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn c(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{what}: expected {expected} values, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("non-finite value during training: {0}")]
    NaNLoss(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("training and validation sets must be non-empty")]
    EmptyDataset,
    #[error("bad checkpoint magic {0:?}, expected \"DIDC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u16),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
