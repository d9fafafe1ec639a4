use thiserror::Error;

use crate::pipeline::{PipelineError, ReportError};
use crate::probes::ProbeError;
use crate::synth::SynthError;
use crate::tensorio::TensorIoError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    TensorIo(#[from] TensorIoError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Failures of a numerical routine on otherwise valid input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Probe(e) => e.is_numerical(),
            Error::Pipeline(e) => e.is_numerical(),
            _ => false,
        }
    }

    pub fn exit_code(&self) -> u8 {
        if self.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_INPUT
        }
    }
}
