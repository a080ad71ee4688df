use serde::{Deserialize, Serialize};

use super::AssessError;
use crate::corpus::{Facet, Vocabulary};
use crate::encoder::{EncoderError, Model};
use crate::losses::DistanceForm;
use crate::scalar::{norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    Compliant,
    Noncompliant,
    Irrelevant,
}

impl From<Facet> for VerdictLabel {
    fn from(f: Facet) -> Self {
        match f {
            Facet::Compliant => VerdictLabel::Compliant,
            Facet::Noncompliant => VerdictLabel::Noncompliant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    /// Present iff the code is relevant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_compliant: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_noncompliant: Option<f64>,
    /// Squared distance to the re-normalized average policy embedding.
    pub d_avg: f64,
    pub d_compliant: f64,
    pub d_noncompliant: f64,
}

/// Both facet embeddings of one policy and their normalized average.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEmbeddings<T> {
    pub compliant: Vec<T>,
    pub noncompliant: Vec<T>,
    pub average: Vec<T>,
}

impl<T: Scalar> PolicyEmbeddings<T> {
    pub fn new(compliant: Vec<T>, noncompliant: Vec<T>) -> Result<Self, AssessError> {
        let half = T::lit(0.5);
        let mean: Vec<T> = compliant.iter().zip(&noncompliant).map(|(&a, &b)| (a + b) * half).collect();
        let n = norm(&mean);
        if n.as_f64() < 1e-12 {
            return Err(AssessError::AntipodalFacets);
        }
        let average = mean.iter().map(|&x| x / n).collect();
        Ok(Self { compliant, noncompliant, average })
    }

    pub fn facet(&self, facet: Facet) -> &[T] {
        match facet {
            Facet::Compliant => &self.compliant,
            Facet::Noncompliant => &self.noncompliant,
        }
    }
}

/// Two-way softmax `e^{-d}` over the facet distances, as `(p_compliant, p_noncompliant)`.
pub fn facet_probabilities(d_compliant: f64, d_noncompliant: f64) -> (f64, f64) {
    let p = 1.0 / (1.0 + (d_compliant - d_noncompliant).exp());
    (p, 1.0 - p)
}

/// Relevance threshold on the averaged policy, then the nearer facet
/// (ties go to compliant).
pub fn classify_embeddings<T: Scalar>(code: &[T], policy: &PolicyEmbeddings<T>, alpha: f64) -> Result<Verdict, AssessError> {
    if !(alpha > 0.0) {
        return Err(AssessError::InvalidAlpha(alpha));
    }
    let term = |a: &[T], b: &[T]| DistanceForm::SqEuclidean.term(a, b).as_f64();
    let d_avg = term(code, &policy.average);
    let d_compliant = term(code, &policy.compliant);
    let d_noncompliant = term(code, &policy.noncompliant);
    if d_avg > alpha {
        return Ok(Verdict { label: VerdictLabel::Irrelevant, p_compliant: None, p_noncompliant: None, d_avg, d_compliant, d_noncompliant });
    }
    let label = if d_compliant <= d_noncompliant { VerdictLabel::Compliant } else { VerdictLabel::Noncompliant };
    let (pc, pn) = facet_probabilities(d_compliant, d_noncompliant);
    Ok(Verdict { label, p_compliant: Some(pc), p_noncompliant: Some(pn), d_avg, d_compliant, d_noncompliant })
}

/// A model paired with the vocabulary it was trained against.
#[derive(Debug, Clone)]
pub struct Embedder<T> {
    model: Model<T>,
    vocab: Vocabulary,
    hash: String,
}

impl<T: Scalar> Embedder<T> {
    pub fn new(model: Model<T>, vocab: Vocabulary) -> Result<Self, AssessError> {
        let vh = vocab.hash();
        if model.vocab_hash != vh {
            return Err(AssessError::VocabMismatch { model: model.vocab_hash.clone(), vocab: vh });
        }
        if vocab.len() != model.shape().vocab_size {
            return Err(AssessError::VocabMismatch { model: model.shape().vocab_size.to_string(), vocab: vocab.len().to_string() });
        }
        let hash = model.hash();
        Ok(Self { model, vocab, hash })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn model_hash(&self) -> &str {
        &self.hash
    }

    pub fn code(&self, code: &str) -> Result<Vec<T>, EncoderError> {
        self.model.encode_code(&self.vocab.tokenize(code))
    }

    pub fn policy_facet(&self, text: &str, facet: Facet) -> Result<Vec<T>, EncoderError> {
        self.model.encode_policy(&self.vocab.tokenize(text), facet)
    }

    pub fn policy(&self, text: &str) -> Result<PolicyEmbeddings<T>, AssessError> {
        let tokens = self.vocab.tokenize(text);
        PolicyEmbeddings::new(self.model.encode_policy(&tokens, Facet::Compliant)?, self.model.encode_policy(&tokens, Facet::Noncompliant)?)
    }

    pub fn classify(&self, policy_text: &str, code: &str, alpha: f64) -> Result<Verdict, AssessError> {
        classify_embeddings(&self.code(code)?, &self.policy(policy_text)?, alpha)
    }
}
