//! Answer selection with biLSTM encoders, optional CNN and attentive
//! composition, and margin-ranking training.

pub mod checkpoint;
pub mod cli;
pub mod composition;
pub mod config;
pub mod data;
pub mod embeddings;
pub mod evaluation;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod scoring;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
