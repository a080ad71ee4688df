//! Bimodal encoder: token sequences (code, or facet-conditioned policy text)
//! to unit-norm embeddings, with hand-written reverse-mode gradients.
//!
//! The reference architecture is deliberately small: mean-pooled token
//! embeddings, a `tanh` hidden layer, a linear output layer and L2
//! normalization. Because pooling is a mean, token order does not affect
//! the output.

mod fixture;
mod forward;
mod gradcheck;
mod model;
mod params;

pub use fixture::{fixture_batch, fixture_model, FIXTURE_SHAPE};
pub use forward::{
    encode_code, encode_policy_masked, encode_policy_prefixed, encode_unfaceted, evaluate_objective,
    forward_backward, mask_regularizers, Objective, Regularizers,
};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCoordinate};
pub use model::{EncodeInput, FacetMode, InputKind, Model, MODEL_FORMAT};
pub use params::{EncoderParams, EncoderShape, GradientBundle, FACET_COUNT, TENSOR_NAMES};

use thiserror::Error;

use crate::corpus::Facet;
use crate::losses::LossError;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("empty token sequence for {0}")]
    EmptySequence(String),
    #[error("token id {token} in {item} is outside the vocabulary of {vocab_size}")]
    TokenOutOfRange { item: String, token: u32, vocab_size: usize },
    #[error("degenerate mask: every entry of the {0} column is non-positive")]
    DegenerateMask(Facet),
    #[error("embedding of {0} has zero norm before normalization")]
    ZeroNorm(String),
    #[error("non-finite loss; offending items: {}", .0.join(", "))]
    NonFiniteLoss(Vec<String>),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid encoder shape: {0}")]
    InvalidShape(String),
    #[error("non-finite values in {0}")]
    NonFiniteParams(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
