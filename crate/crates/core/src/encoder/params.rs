use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::scalar::Scalar;

/// Bound of the uniform token-embedding initialization.
pub const EMBEDDING_INIT: f64 = 0.05;

/// Number of facet columns in the conditional mask.
pub const FACET_COUNT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub vocab_size: usize,
    pub dim: usize,
    pub hidden: usize,
}

impl EncoderShape {
    pub fn new(vocab_size: usize, dim: usize, hidden: usize) -> Self {
        Self { vocab_size, dim, hidden }
    }

    pub fn param_count(&self) -> usize {
        let (v, d, h) = (self.vocab_size, self.dim, self.hidden);
        v * d + h * d + h + d * h + d + d * FACET_COUNT
    }
}

/// Weights of the reference encoder:
/// mean-pooled token embeddings, `d -> h` tanh layer, `h -> d` linear layer,
/// and a `d x 2` facet mask parameter.
///
/// Matrices are row-major. `w1` is `h x d`, `w2` is `d x h`, and
/// `mask_beta[i * 2 + k]` is dimension `i` of facet column `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub shape: EncoderShape,
    pub token_embeddings: Vec<T>,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub mask_beta: Vec<T>,
}

pub const TENSOR_NAMES: [&str; 6] = ["token_embeddings", "w1", "b1", "w2", "b2", "mask_beta"];

impl<T: Scalar> EncoderParams<T> {
    pub fn zeros(shape: EncoderShape) -> Self {
        let (v, d, h) = (shape.vocab_size, shape.dim, shape.hidden);
        Self {
            shape,
            token_embeddings: vec![T::zero(); v * d],
            w1: vec![T::zero(); h * d],
            b1: vec![T::zero(); h],
            w2: vec![T::zero(); d * h],
            b2: vec![T::zero(); d],
            mask_beta: vec![T::zero(); d * FACET_COUNT],
        }
    }

    /// Seeded initialization: token embeddings uniform in (-0.05, 0.05),
    /// `w2` uniform in `±1/sqrt(fan_in)`, zero biases, mask parameters at 1.
    /// `w1` additionally divides its bound by the embedding range so that
    /// pooled inputs of size ~0.05 reach the tanh layer at unit scale.
    pub fn init(shape: EncoderShape, seed: u64) -> Result<Self, EncoderError> {
        if shape.vocab_size == 0 || shape.dim == 0 || shape.hidden == 0 {
            return Err(EncoderError::InvalidShape(format!("{shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, bound: f64| -> Vec<T> { (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect() };
        let (v, d, h) = (shape.vocab_size, shape.dim, shape.hidden);
        let s1 = 1.0 / (EMBEDDING_INIT * (d as f64).sqrt());
        let s2 = 1.0 / (h as f64).sqrt();
        let token_embeddings = uniform(v * d, EMBEDDING_INIT);
        let w1 = uniform(h * d, s1);
        let w2 = uniform(d * h, s2);
        Ok(Self { shape, token_embeddings, w1, b1: vec![T::zero(); h], w2, b2: vec![T::zero(); d], mask_beta: vec![T::one(); d * FACET_COUNT] })
    }

    pub fn tensors(&self) -> [&[T]; 6] {
        [&self.token_embeddings, &self.w1, &self.b1, &self.w2, &self.b2, &self.mask_beta]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 6] {
        [&mut self.token_embeddings, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.mask_beta]
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let zero = Self::zeros(self.shape);
        for ((name, a), b) in TENSOR_NAMES.iter().zip(self.tensors()).zip(zero.tensors()) {
            if a.len() != b.len() {
                return Err(EncoderError::InvalidShape(format!("{name}: expected {} values, got {}", b.len(), a.len())));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(EncoderError::NonFiniteParams(name.to_string()));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let c = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect();
        EncoderParams {
            shape: self.shape,
            token_embeddings: c(&self.token_embeddings),
            w1: c(&self.w1),
            b1: c(&self.b1),
            w2: c(&self.w2),
            b2: c(&self.b2),
            mask_beta: c(&self.mask_beta),
        }
    }

    /// Effective mask column `relu(beta[:, k])`.
    pub fn mask_column(&self, k: usize) -> Vec<T> {
        (0..self.shape.dim).map(|i| self.mask_beta[i * FACET_COUNT + k].max(T::zero())).collect()
    }
}

/// Partial derivatives of a scalar loss, laid out like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<T>(pub EncoderParams<T>);

impl<T: Scalar> GradientBundle<T> {
    pub fn zeros(shape: EncoderShape) -> Self {
        GradientBundle(EncoderParams::zeros(shape))
    }

    pub fn max_abs(&self) -> T {
        self.0.tensors().iter().flat_map(|t| t.iter()).fold(T::zero(), |m, &x| m.max(x.abs()))
    }
}

impl<T> Deref for GradientBundle<T> {
    type Target = EncoderParams<T>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

impl<T> DerefMut for GradientBundle<T> {
    fn deref_mut(&mut self) -> &mut Self::Target {
        &mut self.0
    }
}
