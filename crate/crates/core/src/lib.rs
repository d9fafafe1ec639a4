//! Layer-wise representation diagnostics for frozen encoder embeddings.

pub mod cli;
mod error;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod pooling;
pub mod probes;
pub mod surrogate;
pub mod synth;
pub mod tensorio;

pub use error::{Error, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK};
