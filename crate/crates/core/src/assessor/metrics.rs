use serde::{Deserialize, Serialize};

use super::AssessError;
use crate::corpus::Facet;

/// Mean reciprocal rank of 1-based first-hit ranks.
pub fn mrr(ranks: &[usize]) -> Result<f64, AssessError> {
    if ranks.is_empty() {
        return Err(AssessError::EmptyQueries);
    }
    if ranks.contains(&0) {
        return Err(AssessError::InvalidRank);
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Exact-match fraction.
pub fn accuracy<L: PartialEq>(predictions: &[L], truth: &[L]) -> Result<f64, AssessError> {
    if predictions.len() != truth.len() {
        return Err(AssessError::LengthMismatch { predictions: predictions.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Err(AssessError::EmptySet);
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

/// A reviewer's verdict on one detection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentRecord {
    pub id: String,
    pub policy_text: String,
    pub snippet_id: String,
    pub facet: Facet,
    pub model_tag: String,
    pub decision: Decision,
    /// UTC seconds.
    pub timestamp: u64,
    pub reviewer: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub accepted: usize,
    pub total: usize,
}

impl Tally {
    fn percent(self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.accepted as f64 / self.total as f64)
    }
}

/// Acceptance percentages. A facet with no judgments is `None`; `overall`
/// pools every judgment rather than averaging the facet rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub compliant: Option<f64>,
    pub noncompliant: Option<f64>,
    pub overall: f64,
    pub compliant_counts: Tally,
    pub noncompliant_counts: Tally,
}

pub fn acceptance_rate(judgments: &[JudgmentRecord]) -> Result<AcceptanceRates, AssessError> {
    if judgments.is_empty() {
        return Err(AssessError::EmptySet);
    }
    let mut tallies = [Tally::default(); 2];
    for j in judgments {
        let t = &mut tallies[j.facet.index()];
        t.total += 1;
        if j.decision == Decision::Accept {
            t.accepted += 1;
        }
    }
    let [c, n] = tallies;
    let overall = Tally { accepted: c.accepted + n.accepted, total: c.total + n.total };
    Ok(AcceptanceRates {
        compliant: c.percent(),
        noncompliant: n.percent(),
        overall: overall.percent().expect("non-empty"),
        compliant_counts: c,
        noncompliant_counts: n,
    })
}
