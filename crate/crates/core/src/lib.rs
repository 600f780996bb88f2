//! Core of the behaviour-exploration platform: the annotation model and
//! everything that computes over it.

pub mod canonical;
pub mod cml;
pub mod error;
pub mod model;
pub mod rate;
pub mod sampling;
pub mod search;
pub mod stats;
pub mod storage;

pub use error::ModelError;
pub use rate::SampleRate;
