use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::distance::{pairwise, DistanceForm};
use super::{check_len, EmbeddingLoss, Fingerprint, LossError, LossValue, Reduction};
use crate::corpus::Label;
use crate::scalar::Scalar;

/// Indices into a labeled batch with `l(a) = l(p)`, `l(a) != l(n)`, `a != p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Every valid triplet in lexicographic `(a, p, n)` order.
pub fn enumerate_valid_triplets<L: PartialEq>(labels: &[L]) -> Vec<Triplet> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for neg in 0..n {
                if labels[neg] != labels[a] {
                    out.push(Triplet { anchor: a, positive: p, negative: neg });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningStrategy {
    #[default]
    BatchAll,
    BatchHard,
    BatchSemiHard,
    BatchHardSoftMargin,
}

impl MiningStrategy {
    pub const ALL: [MiningStrategy; 4] = [
        MiningStrategy::BatchAll,
        MiningStrategy::BatchHard,
        MiningStrategy::BatchSemiHard,
        MiningStrategy::BatchHardSoftMargin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MiningStrategy::BatchAll => "batch_all",
            MiningStrategy::BatchHard => "batch_hard",
            MiningStrategy::BatchSemiHard => "batch_semi_hard",
            MiningStrategy::BatchHardSoftMargin => "batch_hard_soft_margin",
        }
    }
}

impl fmt::Display for MiningStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MiningStrategy {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MiningStrategy::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| LossError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

/// Easy if `d_ap + α < d_an`, hard if `d_an < d_ap`, medium otherwise
/// (both boundaries included in medium).
pub fn partition_difficulty<T: Scalar>(d_ap: T, d_an: T, margin: T) -> Difficulty {
    if d_ap + margin < d_an {
        Difficulty::Easy
    } else if d_an < d_ap {
        Difficulty::Hard
    } else {
        Difficulty::Medium
    }
}

/// Bimodal multi-task triplet loss over a labeled batch.
#[derive(Debug, Clone)]
pub struct BmtLoss<T> {
    pub labels: Vec<Label>,
    pub margin: T,
    pub strategy: MiningStrategy,
    pub reduction: Reduction,
    pub distance: DistanceForm,
}

impl<T: Scalar> BmtLoss<T> {
    pub fn new(labels: Vec<Label>, margin: T, strategy: MiningStrategy) -> Self {
        Self { labels, margin, strategy, reduction: Reduction::Mean, distance: DistanceForm::SqEuclidean }
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_distance(mut self, distance: DistanceForm) -> Self {
        self.distance = distance;
        self
    }
}

/// Convenience wrapper returning only the loss value.
pub fn bmt_loss<T: Scalar>(
    embeddings: &[Vec<T>],
    labels: &[Label],
    margin: T,
    strategy: MiningStrategy,
    reduction: Reduction,
) -> Result<(T, bool), LossError> {
    let loss = BmtLoss::new(labels.to_vec(), margin, strategy).with_reduction(reduction);
    let v = loss.evaluate(embeddings)?;
    Ok((v.value, v.no_valid_triplets))
}

/// Hardest positive (largest distance) and hardest negative (smallest
/// distance) for `a`; ties go to the lower index.
fn hardest<T: Scalar>(a: usize, labels: &[Label], d: &[T]) -> Option<(usize, usize)> {
    let n = labels.len();
    let mut pos: Option<usize> = None;
    let mut neg: Option<usize> = None;
    for j in 0..n {
        if j == a {
            continue;
        }
        let dj = d[a * n + j];
        if labels[j] == labels[a] {
            if pos.is_none_or(|p| dj > d[a * n + p]) {
                pos = Some(j);
            }
        } else if neg.is_none_or(|q| dj < d[a * n + q]) {
            neg = Some(j);
        }
    }
    pos.zip(neg)
}

/// The triplet batch-hard mining selects for every anchor that has both a
/// positive and a negative, in anchor order.
pub fn batch_hard_triplets<T: Scalar>(embeddings: &[Vec<T>], labels: &[Label], distance: DistanceForm) -> Result<Vec<Triplet>, LossError> {
    check_len(labels.len(), embeddings.len())?;
    let d = pairwise(embeddings, distance)?;
    Ok((0..labels.len())
        .filter_map(|a| hardest(a, labels, &d).map(|(positive, negative)| Triplet { anchor: a, positive, negative }))
        .collect())
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> EmbeddingLoss<T> for BmtLoss<T> {
    fn batch_len(&self) -> usize {
        self.labels.len()
    }

    fn evaluate(&self, embeddings: &[Vec<T>]) -> Result<LossValue<T>, LossError> {
        check_len(self.labels.len(), embeddings.len())?;
        let n = embeddings.len();
        let dim = embeddings.first().map_or(0, Vec::len);
        let d = pairwise(embeddings, self.distance)?;
        let labels = &self.labels;
        let alpha = self.margin;
        let mut out = LossValue::zeros(n, dim);
        let mut fp = Fingerprint::new();
        // coef[i*n+j]: d(loss)/d(term(i, j)), accumulated before the reduction.
        let mut coef = vec![T::zero(); n * n];
        let mut total = T::zero();
        let mut count = 0usize;
        let mut any_valid = false;

        match self.strategy {
            MiningStrategy::BatchAll | MiningStrategy::BatchSemiHard => {
                let semi = self.strategy == MiningStrategy::BatchSemiHard;
                for t in enumerate_valid_triplets(labels) {
                    any_valid = true;
                    let (a, p, q) = (t.anchor, t.positive, t.negative);
                    let dap = d[a * n + p];
                    let dan = d[a * n + q];
                    if semi && !(dap < dan && dan < dap + alpha) {
                        continue;
                    }
                    let h = dap - dan + alpha;
                    if h > T::zero() {
                        fp.push(((a * n + p) * n + q) as u64);
                        total += h;
                        count += 1;
                        coef[a * n + p] += T::one();
                        coef[a * n + q] -= T::one();
                    }
                }
            }
            MiningStrategy::BatchHard | MiningStrategy::BatchHardSoftMargin => {
                let soft = self.strategy == MiningStrategy::BatchHardSoftMargin;
                for a in 0..n {
                    let Some((p, q)) = hardest(a, labels, &d) else { continue };
                    any_valid = true;
                    count += 1;
                    let x = d[a * n + p] - d[a * n + q];
                    fp.push(((a * n + p) * n + q) as u64);
                    let (value, slope) = if soft {
                        (softplus(x), sigmoid(x))
                    } else if x + alpha > T::zero() {
                        fp.push(1);
                        (x + alpha, T::one())
                    } else {
                        fp.push(0);
                        (T::zero(), T::zero())
                    };
                    total += value;
                    coef[a * n + p] += slope;
                    coef[a * n + q] -= slope;
                }
            }
        }

        let scale = match self.reduction {
            Reduction::Sum => T::one(),
            Reduction::Mean if count > 0 => T::one() / T::from_usize(count).expect("count fits"),
            Reduction::Mean => T::zero(),
        };
        out.value = total * scale;
        out.no_valid_triplets = !any_valid;
        fp.push(count as u64);
        out.signature = fp.finish();
        for i in 0..n {
            for j in 0..n {
                let c = coef[i * n + j] * scale;
                if c != T::zero() {
                    let (gi, gj) = split_pair(&mut out.grads, i, j);
                    self.distance.accumulate_grad(&embeddings[i], &embeddings[j], c, gi, gj);
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn split_pair<T>(v: &mut [Vec<T>], i: usize, j: usize) -> (&mut [T], &mut [T]) {
    assert_ne!(i, j);
    if i < j {
        let (lo, hi) = v.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}
