//! Laboratory for learning and evaluating disentangled representations
//! with few labels.

pub mod data;
pub mod downstream;
pub mod error;
pub mod harness;
pub mod labeling;
pub mod metrics;
pub mod ml;
pub mod representation;
pub mod seed;
pub mod vae;

pub use error::{Error, Result};
