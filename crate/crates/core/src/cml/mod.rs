//! Cooperative machine learning: train a classifier on labelled windows,
//! predict the rest, ask a human to review the least confident predictions,
//! merge the corrections and retrain.

mod active;
mod classifier;
mod features;

use thiserror::Error;

pub use active::{
    apply_corrections, oracle_labels, predict, run_loop, select_for_review, Correction, LoopConfig, LoopInput,
    LoopReport, Prediction, ReviewItem, ReviewSelection, RoundReport, WindowPrediction,
};
pub use classifier::{loss_and_gradient, softmax, train, Gradient, LinearClassifier, TrainConfig, Trained};
pub use features::{feature_windows, window_features, STATS_PER_DIM};

use crate::error::ModelError;
use crate::sampling::SamplingError;

#[derive(Debug, Error)]
pub enum CmlError {
    #[error("empty data")]
    Empty,
    #[error("non-finite features or parameters")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("label {0} is not a class of the model")]
    UnknownLabel(u32),
    #[error("input {0} is not numeric")]
    NonNumeric(String),
    #[error("input {0} has no samples in the window")]
    EmptyInput(String),
    #[error("budget fraction must be in (0, 1], got {0}")]
    InvalidBudget(f64),
    #[error("correction at {0} ms is outside the review selection")]
    OutsideSelection(u64),
    #[error("window time {0} ms is not on the frame grid")]
    OffGrid(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}
