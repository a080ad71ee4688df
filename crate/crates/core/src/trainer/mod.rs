//! Staged training: Doc and CC pre-training, bug-fix pre-fine-tuning, and a
//! deterministic grid search over configurations.

mod data;
mod grid;
mod optim;
mod pipeline;
mod synthetic;
mod train;

pub use data::{bugfix_units, cc_units, compose_batches, doc_units, split, split_units, Batch, TrainItem, TrainUnit};
pub use grid::{grid_search, margin_grid, GridOutcome, MarginRow};
pub use optim::{sgd_step, Sgd};
pub use pipeline::{Pipeline, Stage};
pub use synthetic::{family_bugfix_units, run_experiment, training_texts, Ablation, ExperimentConfig, ExperimentOutcome};
pub use train::{prefinetune, pretrain_cc, pretrain_doc, train_units, validation_mrr, EpochRecord, TrainReport};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assessor::AssessError;
use crate::corpus::CorpusError;
use crate::encoder::{EncoderError, FacetMode, Regularizers};
use crate::losses::{DistanceForm, LossError, MarginConfig, MiningStrategy, Reduction};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 groups to split, found {0}")]
    TooFewGroups(usize),
    #[error("degenerate corpus: no batch contains a valid triplet")]
    DegenerateCorpus,
    #[error("no quadruplet has both a compliant and a non-compliant code")]
    NoFacetCoverage,
    #[error("non-finite parameter update")]
    NonFiniteUpdate,
    #[error("stage {next} cannot run after {previous}")]
    StageOrder { previous: Stage, next: Stage },
    #[error("no training configurations")]
    EmptyGrid,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Assess(#[from] AssessError),
}

/// Objective used for pre-fine-tuning. Pre-training always uses the
/// triplet loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Quadruplet,
    #[default]
    Bmt,
}

impl LossMode {
    pub const ALL: [LossMode; 2] = [LossMode::Quadruplet, LossMode::Bmt];
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Quadruplet => "quadruplet",
            LossMode::Bmt => "bmt",
        })
    }
}

/// Training hyper-parameters. Unknown keys are rejected when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub margins: MarginConfig,
    pub facet_mode: FacetMode,
    pub loss_mode: LossMode,
    pub mining: MiningStrategy,
    pub reduction: Reduction,
    pub distance: DistanceForm,
    pub seed: u64,
    pub lambda_w: f64,
    pub lambda_m: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// 0 disables momentum.
    pub momentum: f64,
    pub dim: usize,
    pub hidden: usize,
    /// Fraction of groups used for training; the rest validate.
    pub train_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            batch_size: 32,
            epochs: 30,
            margins: MarginConfig::default(),
            facet_mode: FacetMode::Prefixed,
            loss_mode: LossMode::Bmt,
            mining: MiningStrategy::BatchAll,
            reduction: Reduction::Mean,
            distance: DistanceForm::SqEuclidean,
            seed: 0,
            lambda_w: 5e-4,
            lambda_m: 5e-4,
            patience: 5,
            momentum: 0.0,
            dim: 64,
            hidden: 128,
            train_ratio: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.dim == 0 || self.hidden == 0 {
            return bad("dim and hidden must be positive");
        }
        if !(self.lambda_w >= 0.0 && self.lambda_m >= 0.0) {
            return bad("regularizer weights must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad("train_ratio must be in (0, 1)");
        }
        self.margins.validate()?;
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self, TrainError> {
        let c: TrainConfig = serde_json::from_str(json).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn regularizers(&self) -> Regularizers {
        Regularizers { lambda_w: self.lambda_w, lambda_m: self.lambda_m }
    }
}
