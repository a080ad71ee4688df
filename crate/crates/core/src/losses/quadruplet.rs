use super::distance::DistanceForm;
use super::triplet::split_pair;
use super::{EmbeddingLoss, Fingerprint, LossError, LossValue, MarginConfig, Reduction};
use crate::corpus::Facet;
use crate::scalar::Scalar;

/// One `(r^y, c^y, c^{¬y}, c~)` entry as indices into an embedding batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadrupletIndex {
    pub facet: Facet,
    pub anchor: usize,
    pub matching: usize,
    pub opposite: usize,
    pub irrelevant: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrupletBreakdown<T> {
    pub plus: T,
    pub minus: T,
    /// `(plus + minus) / 2`
    pub total: T,
}

/// Two-hinge quadruplet loss: the matching code must beat the opposite-facet
/// code by `alpha1`, and the opposite-facet code must beat the irrelevant
/// code by `alpha2`.
#[derive(Debug, Clone)]
pub struct QuadrupletLoss<T> {
    pub entries: Vec<QuadrupletIndex>,
    pub alpha1: T,
    pub alpha2: T,
    pub len: usize,
    /// `Mean` divides each facet's sum by that facet's entry count.
    pub reduction: Reduction,
    pub distance: DistanceForm,
}

impl<T: Scalar> QuadrupletLoss<T> {
    pub fn new(entries: Vec<QuadrupletIndex>, len: usize, margins: &MarginConfig) -> Self {
        Self {
            entries,
            alpha1: T::lit(margins.alpha1),
            alpha2: T::lit(margins.alpha2),
            len,
            reduction: Reduction::Mean,
            distance: DistanceForm::SqEuclidean,
        }
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn breakdown(&self, embeddings: &[Vec<T>]) -> Result<QuadrupletBreakdown<T>, LossError> {
        let (b, _) = self.compute(embeddings, false)?;
        Ok(b)
    }

    fn check(&self, embeddings: &[Vec<T>]) -> Result<(), LossError> {
        super::check_len(self.len, embeddings.len())?;
        for q in &self.entries {
            for i in [q.anchor, q.matching, q.opposite, q.irrelevant] {
                if i >= embeddings.len() {
                    return Err(LossError::IndexOutOfRange(i));
                }
            }
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        if let Some(e) = embeddings.iter().find(|e| e.len() != dim) {
            return Err(LossError::DimensionMismatch { left: dim, right: e.len() });
        }
        Ok(())
    }

    fn compute(&self, embeddings: &[Vec<T>], with_grad: bool) -> Result<(QuadrupletBreakdown<T>, LossValue<T>), LossError> {
        self.check(embeddings)?;
        let dim = embeddings.first().map_or(0, Vec::len);
        let mut out = LossValue::zeros(if with_grad { embeddings.len() } else { 0 }, dim);
        let count = |f: Facet| self.entries.iter().filter(|q| q.facet == f).count();
        let scale_for = |f: Facet| match self.reduction {
            Reduction::Sum => T::one(),
            Reduction::Mean => T::one() / T::from_usize(count(f).max(1)).expect("count fits"),
        };
        let half = T::lit(0.5);
        let mut plus = T::zero();
        let mut minus = T::zero();
        let mut fp = Fingerprint::new();
        for (k, q) in self.entries.iter().enumerate() {
            let e = |i: usize| embeddings[i].as_slice();
            let d_match = self.distance.term(e(q.anchor), e(q.matching));
            let d_opp = self.distance.term(e(q.anchor), e(q.opposite));
            let d_irr = self.distance.term(e(q.anchor), e(q.irrelevant));
            let h1 = d_match - d_opp + self.alpha1;
            let h2 = d_opp - d_irr + self.alpha2;
            let mut entry = T::zero();
            let active1 = h1 > T::zero();
            let active2 = h2 > T::zero();
            if active1 {
                entry += h1;
            }
            if active2 {
                entry += h2;
            }
            fp.push((k as u64) << 2 | (active1 as u64) << 1 | active2 as u64);
            match q.facet {
                Facet::Compliant => plus += entry,
                Facet::Noncompliant => minus += entry,
            }
            if with_grad {
                // total = (scale_y * sum_y) / 2
                let w = half * scale_for(q.facet);
                let mut pairs: Vec<(usize, T)> = Vec::with_capacity(3);
                if active1 {
                    pairs.push((q.matching, w));
                    pairs.push((q.opposite, -w));
                }
                if active2 {
                    pairs.push((q.opposite, w));
                    pairs.push((q.irrelevant, -w));
                }
                for (other, weight) in pairs {
                    if other == q.anchor {
                        continue;
                    }
                    let (ga, gb) = split_pair(&mut out.grads, q.anchor, other);
                    self.distance.accumulate_grad(e(q.anchor), e(other), weight, ga, gb);
                }
            }
        }
        let plus = plus * scale_for(Facet::Compliant);
        let minus = minus * scale_for(Facet::Noncompliant);
        let total = half * (plus + minus);
        out.value = total;
        out.signature = fp.finish();
        Ok((QuadrupletBreakdown { plus, minus, total }, out))
    }
}

impl<T: Scalar> EmbeddingLoss<T> for QuadrupletLoss<T> {
    fn batch_len(&self) -> usize {
        self.len
    }

    fn evaluate(&self, embeddings: &[Vec<T>]) -> Result<LossValue<T>, LossError> {
        Ok(self.compute(embeddings, true)?.1)
    }
}

/// Sums the quadruplet loss over `entries` as written (no averaging).
pub fn quadruplet_loss<T: Scalar>(
    embeddings: &[Vec<T>],
    entries: &[QuadrupletIndex],
    margins: &MarginConfig,
) -> Result<QuadrupletBreakdown<T>, LossError> {
    QuadrupletLoss::new(entries.to_vec(), embeddings.len(), margins)
        .with_reduction(Reduction::Sum)
        .breakdown(embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(facet: Facet) -> QuadrupletIndex {
        QuadrupletIndex { facet, anchor: 0, matching: 1, opposite: 2, irrelevant: 3 }
    }

    #[test]
    fn identical_embeddings_pay_both_margins() {
        let e = vec![vec![1.0f64, 0.0]; 4];
        let m = MarginConfig { alpha1: 0.1, alpha2: 0.3, alpha: 0.2 };
        let b = quadruplet_loss(&e, &[entry(Facet::Compliant)], &m).unwrap();
        assert!((b.plus - 0.4).abs() < 1e-12);
        assert_eq!(b.minus, 0.0);
        assert!((b.total - 0.2).abs() < 1e-12);
    }

    #[test]
    fn scalar_hand_example() {
        // Anchor at the origin, codes on one axis at terms 0.1, 0.3 and 0.5.
        let e: Vec<Vec<f64>> = [0.0, 0.1, 0.3, 0.5].iter().map(|t: &f64| vec![t.sqrt(), 0.0]).collect();
        let d = |i: usize| DistanceForm::SqEuclidean.term(&e[0], &e[i]);
        assert!((d(1) - 0.1).abs() < 1e-12 && (d(2) - 0.3).abs() < 1e-12 && (d(3) - 0.5).abs() < 1e-12);
        let m = MarginConfig { alpha1: 0.1, alpha2: 0.3, alpha: 0.2 };
        let b = quadruplet_loss(&e, &[entry(Facet::Compliant)], &m).unwrap();
        assert!((b.plus - 0.1).abs() < 1e-12);
    }

    #[test]
    fn well_separated_is_zero() {
        let e = vec![vec![0.0f64, 0.0], vec![0.01, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]];
        let b = quadruplet_loss(&e, &[entry(Facet::Noncompliant)], &MarginConfig::default()).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn out_of_range_index() {
        let e = vec![vec![0.0f64]; 3];
        let err = quadruplet_loss(&e, &[entry(Facet::Compliant)], &MarginConfig::default()).unwrap_err();
        assert!(matches!(err, LossError::LengthMismatch { .. } | LossError::IndexOutOfRange(3)));
    }
}
