use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Where a policy text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    Cwe,
    Cbp,
    BugfixComment,
    Synthetic,
    User,
}

/// A natural-language coding rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub id: String,
    pub text: String,
    pub source: PolicySource,
}

impl Policy {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: PolicySource) -> Result<Self, CorpusError> {
        let policy = Self { id: id.into(), text: text.into(), source };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.text.trim().is_empty() {
            return Err(CorpusError::EmptyText(self.id.clone()));
        }
        Ok(())
    }
}

/// Compliance side of a policy. Irrelevance is not a facet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Compliant,
    Noncompliant,
}

impl Facet {
    pub const ALL: [Facet; 2] = [Facet::Compliant, Facet::Noncompliant];

    pub fn opposite(self) -> Facet {
        match self {
            Facet::Compliant => Facet::Noncompliant,
            Facet::Noncompliant => Facet::Compliant,
        }
    }

    /// Column of this facet in the conditional mask matrix.
    pub fn index(self) -> usize {
        match self {
            Facet::Compliant => 0,
            Facet::Noncompliant => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Compliant => "compliant",
            Facet::Noncompliant => "noncompliant",
        }
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Facet {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "compliant" | "+" | "pos" => Ok(Facet::Compliant),
            "noncompliant" | "non-compliant" | "-" | "neg" => Ok(Facet::Noncompliant),
            other => Err(CorpusError::UnknownFacet(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub policy_id: String,
    pub facet: Facet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSnippet {
    pub id: String,
    pub code: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ground_truth: Vec<GroundTruth>,
}

impl CodeSnippet {
    pub fn new(id: impl Into<String>, code: impl Into<String>) -> Self {
        Self { id: id.into(), code: code.into(), ground_truth: Vec::new() }
    }

    pub fn with_truth(mut self, policy_id: impl Into<String>, facet: Facet) -> Self {
        self.ground_truth.push(GroundTruth { policy_id: policy_id.into(), facet });
        self
    }

    pub fn facet_for(&self, policy_id: &str) -> Option<Facet> {
        self.ground_truth.iter().find(|g| g.policy_id == policy_id).map(|g| g.facet)
    }
}

/// Training unit `(r^y, c^y, c^{¬y}, c~)`.
///
/// Slots may be empty for partially labeled data; present code ids are
/// pairwise distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadruplet {
    pub policy_id: String,
    pub facet: Facet,
    pub matching_code_id: Option<String>,
    pub opposite_code_id: Option<String>,
    pub irrelevant_code_id: Option<String>,
}

impl Quadruplet {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let ids: Vec<&String> = [&self.matching_code_id, &self.opposite_code_id, &self.irrelevant_code_id]
            .into_iter()
            .flatten()
            .collect();
        let distinct: HashSet<&&String> = ids.iter().collect();
        if distinct.len() != ids.len() {
            return Err(CorpusError::DuplicateQuadrupletCode(self.policy_id.clone()));
        }
        Ok(())
    }

    /// Code id carrying `facet` for this quadruplet's policy, if known.
    pub fn code_for(&self, facet: Facet) -> Option<&str> {
        if facet == self.facet {
            self.matching_code_id.as_deref()
        } else {
            self.opposite_code_id.as_deref()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugFixRecord {
    pub id: String,
    pub comment: String,
    pub code_before: String,
    pub code_after: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Code,
}

/// Bimodal payload of a [`LabeledItem`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Content {
    /// Natural-language text; policies carry the facet they represent.
    Text { text: String, facet: Option<Facet> },
    Code { code: String },
}

impl Content {
    pub fn modality(&self) -> Modality {
        match self {
            Content::Text { .. } => Modality::Text,
            Content::Code { .. } => Modality::Code,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Content::Text { text, .. } => text,
            Content::Code { code } => code,
        }
    }

    pub fn facet(&self) -> Option<Facet> {
        match self {
            Content::Text { facet, .. } => *facet,
            Content::Code { .. } => None,
        }
    }
}

/// Opaque group id shared by items that belong together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label(pub u64);

/// An un-pivoted `(x, l)` example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledItem {
    /// Id of the policy, snippet or passage the content came from.
    pub source_id: String,
    pub content: Content,
    pub label: Label,
}

impl LabeledItem {
    pub fn modality(&self) -> Modality {
        self.content.modality()
    }
}

/// Policies and snippets with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    policies: Vec<Policy>,
    snippets: Vec<CodeSnippet>,
    policy_index: HashMap<String, usize>,
    snippet_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(policies: Vec<Policy>, snippets: Vec<CodeSnippet>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for p in policies {
            corpus.add_policy(p)?;
        }
        for s in snippets {
            corpus.add_snippet(s)?;
        }
        corpus.check_references()?;
        Ok(corpus)
    }

    pub fn add_policy(&mut self, policy: Policy) -> Result<(), CorpusError> {
        policy.validate()?;
        if self.policy_index.contains_key(&policy.id) {
            return Err(CorpusError::DuplicateId(policy.id));
        }
        self.policy_index.insert(policy.id.clone(), self.policies.len());
        self.policies.push(policy);
        Ok(())
    }

    pub fn add_snippet(&mut self, snippet: CodeSnippet) -> Result<(), CorpusError> {
        if snippet.code.trim().is_empty() {
            return Err(CorpusError::EmptyText(snippet.id));
        }
        if self.snippet_index.contains_key(&snippet.id) {
            return Err(CorpusError::DuplicateId(snippet.id));
        }
        self.snippet_index.insert(snippet.id.clone(), self.snippets.len());
        self.snippets.push(snippet);
        Ok(())
    }

    pub fn check_references(&self) -> Result<(), CorpusError> {
        for s in &self.snippets {
            for g in &s.ground_truth {
                if !self.policy_index.contains_key(&g.policy_id) {
                    return Err(CorpusError::UnknownId(g.policy_id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn snippets(&self) -> &[CodeSnippet] {
        &self.snippets
    }

    pub fn policy(&self, id: &str) -> Option<&Policy> {
        self.policy_index.get(id).map(|&i| &self.policies[i])
    }

    pub fn snippet(&self, id: &str) -> Option<&CodeSnippet> {
        self.snippet_index.get(id).map(|&i| &self.snippets[i])
    }

    /// Snippets labeled for `policy_id` with the given facet, in corpus order.
    pub fn labeled(&self, policy_id: &str, facet: Facet) -> impl Iterator<Item = &CodeSnippet> {
        let policy_id = policy_id.to_string();
        self.snippets.iter().filter(move |s| s.facet_for(&policy_id) == Some(facet))
    }

    /// Snippets with no ground truth at all.
    pub fn distractors(&self) -> impl Iterator<Item = &CodeSnippet> {
        self.snippets.iter().filter(|s| s.ground_truth.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn facet_parsing_and_opposite() {
        assert_eq!("compliant".parse::<Facet>().unwrap(), Facet::Compliant);
        assert_eq!("non-compliant".parse::<Facet>().unwrap(), Facet::Noncompliant);
        assert!("irrelevant".parse::<Facet>().is_err());
        assert_eq!(Facet::Compliant.opposite(), Facet::Noncompliant);
    }

    #[test]
    fn blank_policy_rejected() {
        assert!(Policy::new("p", "   \n", PolicySource::User).is_err());
    }

    #[test]
    fn corpus_rejects_dangling_truth_and_duplicates() {
        let p = Policy::new("p1", "use x", PolicySource::User).unwrap();
        let s = CodeSnippet::new("s1", "x()").with_truth("p2", Facet::Compliant);
        assert!(matches!(Corpus::new(vec![p.clone()], vec![s]), Err(CorpusError::UnknownId(_))));
        assert!(matches!(Corpus::new(vec![p.clone(), p], vec![]), Err(CorpusError::DuplicateId(_))));
    }

    #[test]
    fn quadruplet_codes_distinct() {
        let q = Quadruplet {
            policy_id: "p".into(),
            facet: Facet::Compliant,
            matching_code_id: Some("a".into()),
            opposite_code_id: Some("a".into()),
            irrelevant_code_id: None,
        };
        assert!(q.validate().is_err());
    }

    #[test]
    fn snippet_json_ground_truth_optional() {
        let s: CodeSnippet = serde_json::from_str(r#"{"id":"a","code":"f()"}"#).unwrap();
        assert!(s.ground_truth.is_empty());
        let s: CodeSnippet = serde_json::from_str(
            r#"{"id":"a","code":"f()","ground_truth":[{"policy_id":"p","facet":"noncompliant"}]}"#,
        )
        .unwrap();
        assert_eq!(s.facet_for("p"), Some(Facet::Noncompliant));
    }
}
