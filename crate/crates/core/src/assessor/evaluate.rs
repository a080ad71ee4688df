use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classify::{classify_embeddings, Embedder, PolicyEmbeddings, VerdictLabel};
use super::index::sq_term;
use super::metrics::{accuracy, mrr};
use super::AssessError;
use crate::corpus::{Corpus, Facet, PolicySource};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mrr_compliant: f64,
    pub mrr_noncompliant: f64,
    pub n_policies: usize,
    pub n_snippets: usize,
    pub alpha: f64,
    pub model_hash: String,
    /// Queries dropped from a facet's MRR because the policy has no
    /// ground-truth snippet for that facet.
    pub excluded_queries: usize,
}

/// One `(policy, snippet)` classification pair with its expected label.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub policy: usize,
    pub snippet: usize,
    pub truth: VerdictLabel,
}

/// Labeled pairs of every policy plus, per policy, as many seeded
/// distractor pairs as it has labeled snippets.
pub fn evaluation_pairs(corpus: &Corpus, seed: u64) -> Vec<EvalPair> {
    let distractors: Vec<usize> =
        corpus.snippets().iter().enumerate().filter(|(_, s)| s.ground_truth.is_empty()).map(|(i, _)| i).collect();
    let mut pairs = Vec::new();
    for (p, policy) in corpus.policies().iter().enumerate() {
        let mut labeled = 0;
        for (i, s) in corpus.snippets().iter().enumerate() {
            if let Some(f) = s.facet_for(&policy.id) {
                pairs.push(EvalPair { policy: p, snippet: i, truth: f.into() });
                labeled += 1;
            }
        }
        let take = labeled.min(distractors.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut picks = sample(&mut rng, distractors.len(), take).into_vec();
        picks.sort_unstable();
        pairs.extend(picks.into_iter().map(|k| EvalPair { policy: p, snippet: distractors[k], truth: VerdictLabel::Irrelevant }));
    }
    pairs
}

struct Encoded<T> {
    policies: Vec<PolicyEmbeddings<T>>,
    snippets: Vec<Vec<T>>,
}

fn encode_corpus<T: Scalar>(corpus: &Corpus, embedder: &Embedder<T>) -> Result<Encoded<T>, AssessError> {
    let policies = corpus.policies().iter().map(|p| embedder.policy(&p.text)).collect::<Result<Vec<_>, _>>()?;
    let mut snippets = Vec::with_capacity(corpus.snippets().len());
    for s in corpus.snippets() {
        snippets.push(embedder.code(&s.code).map_err(|source| AssessError::Encoding { id: s.id.clone(), source })?);
    }
    Ok(Encoded { policies, snippets })
}

/// 3-class accuracy over [`evaluation_pairs`] and per-facet MRR of the
/// first ground-truth hit when ranking the whole corpus.
pub fn evaluate<T: Scalar>(corpus: &Corpus, embedder: &Embedder<T>, alpha: f64, seed: u64) -> Result<EvalReport, AssessError> {
    if let Some(p) = corpus.policies().iter().find(|p| p.source == PolicySource::BugfixComment) {
        return Err(AssessError::TrainingOverlap(p.id.clone()));
    }
    let enc = encode_corpus(corpus, embedder)?;
    let pairs = evaluation_pairs(corpus, seed);
    if !pairs.iter().any(|p| p.truth != VerdictLabel::Irrelevant) {
        return Err(AssessError::NoLabeledExamples);
    }
    let mut predictions = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        predictions.push(classify_embeddings(&enc.snippets[pair.snippet], &enc.policies[pair.policy], alpha)?.label);
    }
    let truth: Vec<VerdictLabel> = pairs.iter().map(|p| p.truth).collect();
    let acc = accuracy(&predictions, &truth)?;

    let ids: Vec<&str> = corpus.snippets().iter().map(|s| s.id.as_str()).collect();
    let mut ranks: HashMap<Facet, Vec<usize>> = HashMap::new();
    let mut excluded = 0;
    for (p, policy) in corpus.policies().iter().enumerate() {
        for facet in Facet::ALL {
            let hits: Vec<bool> = corpus.snippets().iter().map(|s| s.facet_for(&policy.id) == Some(facet)).collect();
            if !hits.contains(&true) {
                excluded += 1;
                continue;
            }
            let q = enc.policies[p].facet(facet);
            let mut order: Vec<(f64, usize)> = enc.snippets.iter().enumerate().map(|(i, e)| (sq_term(q, e), i)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(ids[b.1])));
            let first = order.iter().position(|&(_, i)| hits[i]).expect("hit exists") + 1;
            ranks.entry(facet).or_default().push(first);
        }
    }
    if excluded > 0 {
        log::info!("excluded {excluded} facet queries without ground truth from MRR");
    }
    let facet_mrr = |f: Facet| ranks.get(&f).map_or(Ok(0.0), |r| mrr(r));
    Ok(EvalReport {
        accuracy: acc,
        mrr_compliant: facet_mrr(Facet::Compliant)?,
        mrr_noncompliant: facet_mrr(Facet::Noncompliant)?,
        n_policies: corpus.policies().len(),
        n_snippets: corpus.snippets().len(),
        alpha,
        model_hash: embedder.model_hash().to_string(),
        excluded_queries: excluded,
    })
}

/// Relevance threshold that best separates labeled pairs from sampled
/// distractor pairs by their distance to the averaged policy embedding.
pub fn calibrate_alpha<T: Scalar>(corpus: &Corpus, embedder: &Embedder<T>, seed: u64) -> Result<f64, AssessError> {
    let enc = encode_corpus(corpus, embedder)?;
    let mut scored: Vec<(f64, bool)> = evaluation_pairs(corpus, seed)
        .iter()
        .map(|p| (sq_term(&enc.snippets[p.snippet], &enc.policies[p.policy].average), p.truth != VerdictLabel::Irrelevant))
        .collect();
    if !scored.iter().any(|s| s.1) {
        return Err(AssessError::NoLabeledExamples);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_irrelevant = scored.iter().filter(|s| !s.1).count();
    // Threshold after position i: relevant at or below, irrelevant above.
    let mut best = (total_irrelevant, scored[0].0 / 2.0);
    let mut relevant_below = 0;
    let mut irrelevant_below = 0;
    for i in 0..scored.len() {
        if scored[i].1 {
            relevant_below += 1;
        } else {
            irrelevant_below += 1;
        }
        if i + 1 < scored.len() && scored[i + 1].0 == scored[i].0 {
            continue;
        }
        let correct = relevant_below + total_irrelevant - irrelevant_below;
        let cut = match scored.get(i + 1) {
            Some(next) => (scored[i].0 + next.0) / 2.0,
            None => scored[i].0 + 1e-6,
        };
        if correct > best.0 {
            best = (correct, cut);
        }
    }
    Ok(best.1.max(1e-9))
}
