//! Data model, tokenization and corpus re-interpretation.

pub mod bpe;
pub mod io;
pub mod reinterpret;
pub mod synth;
mod types;

pub use bpe::{pre_tokenize, train_bpe, Vocabulary};
pub use reinterpret::{
    build_bugfix_dataset, default_policy_predicate, filter_policy_like, mine_irrelevant, reinterpret_bugfix,
    segment_documentation, unpivot, unpivot_grouped, BugFixDataset, FilterOutcome, QuadrupletPair, ReinterpretedFix,
};
pub use synth::{synth_corpus, CodeComment, Family, SynthConfig, SyntheticData};
pub use types::*;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocab size {requested} too small, need at least {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("empty text for {0}")]
    EmptyText(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("unknown facet {0:?}")]
    UnknownFacet(String),
    #[error("quadruplet for {0} repeats a code id")]
    DuplicateQuadrupletCode(String),
    #[error("passage length {0} is below the minimum of 8")]
    PassageTooShort(usize),
    #[error("bug-fix record {0} does not change the code")]
    DegenerateFix(String),
    #[error("irrelevant mining needs at least 2 records, pool has {0}")]
    PoolTooSmall(usize),
    #[error("facet mismatch in quadruplet pair for {0}")]
    FacetMismatch(String),
    #[error("quadruplet pair has neither facet")]
    EmptyPair,
    #[error("invalid synthetic corpus config: {0}")]
    InvalidSynthConfig(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
