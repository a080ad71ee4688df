//! Zero-shot classification, compliance search and evaluation metrics.

mod classify;
mod evaluate;
mod index;
mod metrics;

pub use classify::{classify_embeddings, facet_probabilities, Embedder, PolicyEmbeddings, Verdict, VerdictLabel};
pub use evaluate::{calibrate_alpha, evaluate, evaluation_pairs, EvalPair, EvalReport};
pub use index::{EmbeddingIndex, IvfIndex, RankedResult, INDEX_FORMAT, INDEX_MAGIC};
pub use metrics::{accuracy, acceptance_rate, mrr, AcceptanceRates, Decision, JudgmentRecord, Tally};

use thiserror::Error;

use crate::encoder::EncoderError;

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("empty query set")]
    EmptyQueries,
    #[error("ranks must be at least 1")]
    InvalidRank,
    #[error("{predictions} predictions for {truth} truth labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("empty set")]
    EmptySet,
    #[error("antipodal facets: the averaged policy embedding is zero")]
    AntipodalFacets,
    #[error("relevance threshold must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index is empty")]
    EmptyIndex,
    #[error("stale index: built for model {index}, queried with {model}")]
    StaleIndex { index: String, model: String },
    #[error("vocabulary mismatch: model expects {model}, got {vocab}")]
    VocabMismatch { model: String, vocab: String },
    #[error("benchmark has no labeled examples")]
    NoLabeledExamples,
    #[error("benchmark policy {0} was minted from training data")]
    TrainingOverlap(String),
    #[error("encoding {id}: {source}")]
    Encoding { id: String, source: EncoderError },
    #[error("malformed index: {0}")]
    Format(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
