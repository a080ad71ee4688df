//! Faceted metric learning for coding-policy compliance.
//!
//! Natural-language coding policies are embedded twice, once per facet
//! (compliant and non-compliant), into the same unit-sphere space as code
//! snippets. A code snippet is classified by its distance to the averaged
//! policy embedding (relevance) and to the two facet embeddings (compliance),
//! and searched by ranking snippets by distance to one facet.
//!
//! - [`corpus`]: data model, BPE tokenization, corpus re-interpretation, synthetic data.
//! - [`encoder`]: the differentiable encoder and gradient checking.
//! - [`losses`]: quadruplet and batch triplet losses with mining strategies.
//! - [`trainer`]: pre-training, pre-fine-tuning and grid search.
//! - [`assessor`]: classification, search indexes and evaluation metrics.

pub mod assessor;
pub mod corpus;
pub mod encoder;
pub mod losses;
pub mod scalar;
pub mod trainer;

pub use scalar::Scalar;

/// Training precision.
pub type Model64 = encoder::Model<f64>;
/// Inference-only single-precision snapshot.
pub type Model32 = encoder::Model<f32>;
pub type Params64 = encoder::EncoderParams<f64>;
pub type Params32 = encoder::EncoderParams<f32>;
pub type Index64 = assessor::EmbeddingIndex<f64>;
pub type Index32 = assessor::EmbeddingIndex<f32>;
