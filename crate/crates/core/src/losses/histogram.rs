use std::fmt::Write;

use super::distance::{pairwise, DistanceForm};
use super::LossError;
use crate::corpus::Label;
use crate::scalar::Scalar;

/// Aligned histograms of same-label and different-label pair distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceHistogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl DistanceHistogram {
    /// `bin_lo,bin_hi,pos_count,neg_count` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,pos_count,neg_count\n");
        for i in 0..self.positive.len() {
            let _ = writeln!(out, "{},{},{},{}", self.edges[i], self.edges[i + 1], self.positive[i], self.negative[i]);
        }
        out
    }
}

/// Bins every unordered pair `i < j` by its squared distance over `[0, max]`.
pub fn distance_histogram<T: Scalar>(embeddings: &[Vec<T>], labels: &[Label], bins: usize) -> Result<DistanceHistogram, LossError> {
    if bins < 2 {
        return Err(LossError::TooFewBins(2));
    }
    super::check_len(labels.len(), embeddings.len())?;
    let n = embeddings.len();
    let d = pairwise(embeddings, DistanceForm::SqEuclidean)?;
    let mut hi = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            hi = hi.max(d[i * n + j].as_f64());
        }
    }
    if hi <= 0.0 {
        hi = 1.0;
    }
    let width = hi / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { k as f64 * width }).collect();
    let mut positive = vec![0; bins];
    let mut negative = vec![0; bins];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = d[i * n + j].as_f64();
            let k = ((v / width) as usize).min(bins - 1);
            if labels[i] == labels[j] {
                positive[k] += 1;
            } else {
                negative[k] += 1;
            }
        }
    }
    Ok(DistanceHistogram { edges, positive, negative })
}
