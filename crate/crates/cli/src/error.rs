//! Command errors and their exit codes.

use p2c::assessor::AssessError;
use p2c::corpus::CorpusError;
use p2c::encoder::EncoderError;
use p2c::trainer::TrainError;
use thiserror::Error;

use crate::service::ServiceError;
use crate::store::StoreError;

/// Exit code for a problem with the invocation or its inputs.
pub const EXIT_USER: u8 = 1;
/// Exit code for a defect or an unexpected runtime failure.
pub const EXIT_INTERNAL: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("gradient check failed: max relative error {max_rel_error:.3e} exceeds {tolerance:.1e}")]
    GradientMismatch { max_rel_error: f64, tolerance: f64 },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => EXIT_USER,
            CliError::GradientMismatch { .. } | CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::NonFiniteLoss(_) | EncoderError::NonFiniteParams(_) => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<AssessError> for CliError {
    fn from(e: AssessError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteUpdate => CliError::Internal(e.to_string()),
            TrainError::Encoder(inner) => inner.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Internal(m) => CliError::Internal(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        ServiceError::from(e).into()
    }
}
