use serde::{Deserialize, Serialize};

use super::LossError;
use crate::scalar::Scalar;

/// How the `d(.,.)²` term fed to the hinges is computed.
///
/// Both forms produce the squared Euclidean distance; `EuclideanThenSquare`
/// takes the square root first and squares the result, exactly as written in
/// the loss formulas. Its gradient at zero distance is taken to be zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceForm {
    #[default]
    SqEuclidean,
    EuclideanThenSquare,
}

impl DistanceForm {
    pub fn term<T: Scalar>(self, a: &[T], b: &[T]) -> T {
        let sq = raw_sq(a, b);
        match self {
            DistanceForm::SqEuclidean => sq,
            DistanceForm::EuclideanThenSquare => {
                let d = sq.sqrt();
                d * d
            }
        }
    }

    /// Derivative of `term(a, b)` with respect to `a`, scaled by `weight`,
    /// added into `ga`; the negation goes into `gb`.
    pub(crate) fn accumulate_grad<T: Scalar>(self, a: &[T], b: &[T], weight: T, ga: &mut [T], gb: &mut [T]) {
        if weight == T::zero() {
            return;
        }
        if self == DistanceForm::EuclideanThenSquare && raw_sq(a, b) == T::zero() {
            return;
        }
        let two = T::lit(2.0);
        for i in 0..a.len() {
            let g = two * weight * (a[i] - b[i]);
            ga[i] += g;
            gb[i] -= g;
        }
    }
}

fn raw_sq<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Squared Euclidean distance.
pub fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> Result<T, LossError> {
    if a.len() != b.len() {
        return Err(LossError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    Ok(raw_sq(a, b))
}

/// Pairwise `term` matrix, row-major `n x n`.
pub(crate) fn pairwise<T: Scalar>(embeddings: &[Vec<T>], form: DistanceForm) -> Result<Vec<T>, LossError> {
    let n = embeddings.len();
    if let Some(first) = embeddings.first() {
        for e in embeddings {
            if e.len() != first.len() {
                return Err(LossError::DimensionMismatch { left: first.len(), right: e.len() });
            }
        }
    }
    let mut d = vec![T::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = form.term(&embeddings[i], &embeddings[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_values() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        assert_eq!(sq_dist(&a, &a).unwrap(), 0.0);
        assert_eq!(sq_dist(&a, &b).unwrap(), 2.0);
        assert!(matches!(sq_dist(&a, &[1.0]), Err(LossError::DimensionMismatch { .. })));
    }

    #[test]
    fn unit_vector_identity() {
        let a = [0.6, 0.8, 0.0];
        let b = [0.0, 0.6, 0.8];
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((sq_dist(&a, &b).unwrap() - (2.0 - 2.0 * dot)).abs() < 1e-12);
    }

    #[test]
    fn forms_agree() {
        let a = [0.3f64, -0.2, 0.9];
        let b = [-0.1, 0.4, 0.2];
        let s = DistanceForm::SqEuclidean.term(&a, &b);
        let e = DistanceForm::EuclideanThenSquare.term(&a, &b);
        assert!((s - e).abs() < 1e-12);
    }
}
