//! Metric-learning objectives over batches of unit embeddings.
//!
//! Every loss reports its value together with the gradient with respect to
//! each input embedding, so the encoder can back-propagate through it. Hinge
//! kinks use a zero subgradient.

mod distance;
mod histogram;
mod quadruplet;
mod triplet;

pub use distance::{sq_dist, DistanceForm};
pub use histogram::{distance_histogram, DistanceHistogram};
pub use quadruplet::{quadruplet_loss, QuadrupletBreakdown, QuadrupletIndex, QuadrupletLoss};
pub use triplet::{
    batch_hard_triplets, bmt_loss, enumerate_valid_triplets, partition_difficulty, BmtLoss, Difficulty, MiningStrategy, Triplet,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("expected {expected} embeddings, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("invalid margins: {0}")]
    InvalidMargins(String),
    #[error("unknown mining strategy {0:?}")]
    UnknownStrategy(String),
    #[error("need at least {0} bins")]
    TooFewBins(usize),
}

/// Hinge margins. `alpha1`/`alpha2` drive the quadruplet loss, `alpha` the
/// triplet loss and the relevance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self { alpha1: 0.2, alpha2: 0.4, alpha: 0.2 }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.alpha1 > 0.0 && self.alpha2 > self.alpha1) {
            return Err(LossError::InvalidMargins(format!(
                "need alpha2 > alpha1 > 0, got alpha1={} alpha2={}",
                self.alpha1, self.alpha2
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.alpha2.is_finite()) {
            return Err(LossError::InvalidMargins(format!("need finite alpha > 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// How per-term hinge values are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Mean over contributing terms (positive-loss triplets for batch-all).
    #[default]
    Mean,
    /// Plain sum, as the formulas are written.
    Sum,
}

/// Loss value and its gradient with respect to each embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub grads: Vec<Vec<T>>,
    /// Fingerprint of the active hinge set and mined selections. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub signature: u64,
    pub no_valid_triplets: bool,
}

impl<T: Scalar> LossValue<T> {
    pub(crate) fn zeros(n: usize, dim: usize) -> Self {
        Self { value: T::zero(), grads: vec![vec![T::zero(); dim]; n], signature: 0, no_valid_triplets: false }
    }
}

/// Differentiable scalar objective over a batch of embeddings.
pub trait EmbeddingLoss<T: Scalar> {
    /// Number of embeddings the loss expects.
    fn batch_len(&self) -> usize;

    fn evaluate(&self, embeddings: &[Vec<T>]) -> Result<LossValue<T>, LossError>;
}

/// Loss that ignores its input. Useful for checking plumbing.
#[derive(Debug, Clone, Copy)]
pub struct ConstantLoss<T> {
    pub value: T,
    pub len: usize,
}

impl<T: Scalar> EmbeddingLoss<T> for ConstantLoss<T> {
    fn batch_len(&self) -> usize {
        self.len
    }

    fn evaluate(&self, embeddings: &[Vec<T>]) -> Result<LossValue<T>, LossError> {
        let dim = embeddings.first().map_or(0, Vec::len);
        let mut out = LossValue::zeros(embeddings.len(), dim);
        out.value = self.value;
        Ok(out)
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<(), LossError> {
    if expected != got {
        return Err(LossError::LengthMismatch { expected, got });
    }
    Ok(())
}

/// Incremental FNV-1a over `u64` words.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Fingerprint(u64);

impl Fingerprint {
    pub fn new() -> Self {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }

    pub fn push(&mut self, x: u64) {
        for b in x.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_validation() {
        assert!(MarginConfig::default().validate().is_ok());
        assert!(MarginConfig { alpha1: 0.4, alpha2: 0.2, alpha: 0.2 }.validate().is_err());
        assert!(MarginConfig { alpha1: 0.0, alpha2: 0.2, alpha: 0.2 }.validate().is_err());
        assert!(MarginConfig { alpha1: 0.1, alpha2: 0.2, alpha: 0.0 }.validate().is_err());
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let e = vec![vec![0.5f64, 0.5], vec![1.0, 0.0]];
        let v = ConstantLoss { value: 3.0, len: 2 }.evaluate(&e).unwrap();
        assert_eq!(v.value, 3.0);
        assert!(v.grads.iter().flatten().all(|&g| g == 0.0));
    }
}
