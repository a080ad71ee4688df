//! Turning general software data into faceted training units.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bpe::Vocabulary;
use super::types::*;
use super::CorpusError;

pub const MIN_PASSAGE_LEN: usize = 8;

/// Splits each paragraph into non-overlapping passages of `passage_len`
/// tokens. A trailing remainder is kept only if it has at least half that
/// many tokens. Passages of one paragraph share a label.
pub fn segment_documentation<S: AsRef<str>>(
    paragraphs: &[S],
    passage_len: usize,
    vocab: &Vocabulary,
) -> Result<Vec<LabeledItem>, CorpusError> {
    if passage_len < MIN_PASSAGE_LEN {
        return Err(CorpusError::PassageTooShort(passage_len));
    }
    let mut items = Vec::new();
    for (p, paragraph) in paragraphs.iter().enumerate() {
        let ids = vocab.tokenize_full(paragraph.as_ref());
        for (k, chunk) in ids.chunks(passage_len).enumerate() {
            if chunk.len() < passage_len && 2 * chunk.len() < passage_len {
                continue;
            }
            items.push(LabeledItem {
                source_id: format!("doc:{p}:{k}"),
                content: Content::Text { text: vocab.detokenize(chunk), facet: None },
                label: Label(p as u64),
            });
        }
    }
    Ok(items)
}

/// Result of reading one bug-fix record as a policy with two faceted codes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReinterpretedFix {
    pub policy: Policy,
    pub before: CodeSnippet,
    pub after: CodeSnippet,
    /// `(r-, c-, c+, _)`
    pub noncompliant: Quadruplet,
    /// `(r+, c+, c-, _)`
    pub compliant: Quadruplet,
}

pub fn bugfix_policy_id(record_id: &str) -> String {
    format!("bf:{record_id}")
}

pub fn bugfix_code_id(record_id: &str, after: bool) -> String {
    format!("bf:{record_id}:{}", if after { "after" } else { "before" })
}

/// The review comment becomes a policy; `code_before` is its non-compliant
/// example and `code_after` its compliant one. Irrelevant slots stay empty.
pub fn reinterpret_bugfix(record: &BugFixRecord) -> Result<ReinterpretedFix, CorpusError> {
    if record.comment.trim().is_empty() {
        return Err(CorpusError::EmptyText(record.id.clone()));
    }
    if record.code_before == record.code_after {
        return Err(CorpusError::DegenerateFix(record.id.clone()));
    }
    if record.code_before.trim().is_empty() || record.code_after.trim().is_empty() {
        return Err(CorpusError::EmptyText(record.id.clone()));
    }
    let policy_id = bugfix_policy_id(&record.id);
    let before_id = bugfix_code_id(&record.id, false);
    let after_id = bugfix_code_id(&record.id, true);
    let policy = Policy::new(policy_id.clone(), record.comment.clone(), PolicySource::BugfixComment)?;
    let before = CodeSnippet::new(before_id.clone(), record.code_before.clone()).with_truth(&policy_id, Facet::Noncompliant);
    let after = CodeSnippet::new(after_id.clone(), record.code_after.clone()).with_truth(&policy_id, Facet::Compliant);
    Ok(ReinterpretedFix {
        noncompliant: Quadruplet {
            policy_id: policy_id.clone(),
            facet: Facet::Noncompliant,
            matching_code_id: Some(before_id.clone()),
            opposite_code_id: Some(after_id.clone()),
            irrelevant_code_id: None,
        },
        compliant: Quadruplet {
            policy_id,
            facet: Facet::Compliant,
            matching_code_id: Some(after_id),
            opposite_code_id: Some(before_id),
            irrelevant_code_id: None,
        },
        policy,
        before,
        after,
    })
}

/// Picks an irrelevant snippet for `record_id` from another record of the
/// pool, uniformly over records and then over the before/after side.
pub fn mine_irrelevant(record_id: &str, pool: &[BugFixRecord], rng_seed: u64) -> Result<String, CorpusError> {
    let others: Vec<&BugFixRecord> = pool.iter().filter(|r| r.id != record_id).collect();
    if pool.len() < 2 || others.is_empty() {
        return Err(CorpusError::PoolTooSmall(pool.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pick = others[rng.gen_range(0..others.len())];
    Ok(bugfix_code_id(&pick.id, rng.gen_bool(0.5)))
}

const POLICY_CUES: [&str; 6] = ["should", "must", "avoid", "use", "never", "prefer"];
const MIN_POLICY_TOKENS: usize = 4;

/// Default policy-likeness heuristic: an imperative or modal cue
/// ("should", "must", "avoid", "use", "never", "prefer", "do not") and at
/// least four whitespace-separated tokens.
pub fn default_policy_predicate(text: &str) -> bool {
    let words: Vec<String> = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .collect();
    if words.len() < MIN_POLICY_TOKENS {
        return false;
    }
    let cue = words.iter().any(|w| POLICY_CUES.contains(&w.as_str()));
    let do_not = words.windows(2).any(|w| w[0] == "do" && w[1] == "not");
    cue || do_not
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Indices of retained entries, ascending.
    pub retained: Vec<usize>,
    pub retained_fraction: f64,
}

impl FilterOutcome {
    pub fn select<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.retained.iter().map(|&i| items[i].clone()).collect()
    }
}

/// Order-preserving filter of review comments.
pub fn filter_policy_like<S, P>(comments: &[S], predicate: P) -> FilterOutcome
where
    S: AsRef<str>,
    P: Fn(&str) -> bool,
{
    let retained: Vec<usize> = comments
        .iter()
        .enumerate()
        .filter(|(_, c)| predicate(c.as_ref()))
        .map(|(i, _)| i)
        .collect();
    let retained_fraction = if comments.is_empty() { 1.0 } else { retained.len() as f64 / comments.len() as f64 };
    FilterOutcome { retained, retained_fraction }
}

/// Both facets of one policy, either side possibly missing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadrupletPair {
    pub compliant: Option<Quadruplet>,
    pub noncompliant: Option<Quadruplet>,
}

impl QuadrupletPair {
    fn policy_id(&self) -> Result<&str, CorpusError> {
        if let Some(q) = &self.compliant {
            if q.facet != Facet::Compliant {
                return Err(CorpusError::FacetMismatch(q.policy_id.clone()));
            }
        }
        if let Some(q) = &self.noncompliant {
            if q.facet != Facet::Noncompliant {
                return Err(CorpusError::FacetMismatch(q.policy_id.clone()));
            }
        }
        match (&self.compliant, &self.noncompliant) {
            (Some(a), Some(b)) if a.policy_id != b.policy_id => Err(CorpusError::FacetMismatch(a.policy_id.clone())),
            (Some(q), _) | (None, Some(q)) => Ok(&q.policy_id),
            (None, None) => Err(CorpusError::EmptyPair),
        }
    }

    fn code_for(&self, facet: Facet) -> Result<Option<&str>, CorpusError> {
        let a = self.compliant.as_ref().and_then(|q| q.code_for(facet));
        let b = self.noncompliant.as_ref().and_then(|q| q.code_for(facet));
        match (a, b) {
            (Some(x), Some(y)) if x != y => Err(CorpusError::FacetMismatch(x.to_string())),
            (x, y) => Ok(x.or(y)),
        }
    }

    fn irrelevant(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for q in [&self.compliant, &self.noncompliant].into_iter().flatten() {
            if let Some(id) = q.irrelevant_code_id.as_deref() {
                if !out.contains(&id) {
                    out.push(id);
                }
            }
        }
        out
    }
}

/// Flattens quadruplet pairs into labeled items:
/// `[(r+, l1), (c+, l1), (r-, l2), (c-, l2), (c~, l~)]` per pair, with a fresh
/// label for every facet group and for every irrelevant item. Facets with no
/// known code are skipped.
pub fn unpivot(pairs: &[QuadrupletPair], corpus: &Corpus) -> Result<Vec<LabeledItem>, CorpusError> {
    Ok(unpivot_grouped(pairs, corpus)?.into_iter().flatten().collect())
}

/// Like [`unpivot`] but keeps the items of each pair together.
pub fn unpivot_grouped(pairs: &[QuadrupletPair], corpus: &Corpus) -> Result<Vec<Vec<LabeledItem>>, CorpusError> {
    let mut next_label = 0u64;
    let mut fresh = || {
        next_label += 1;
        Label(next_label - 1)
    };
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let policy_id = pair.policy_id()?;
        let policy = corpus.policy(policy_id).ok_or_else(|| CorpusError::UnknownId(policy_id.to_string()))?;
        let code = |id: &str| -> Result<Content, CorpusError> {
            let s = corpus.snippet(id).ok_or_else(|| CorpusError::UnknownId(id.to_string()))?;
            Ok(Content::Code { code: s.code.clone() })
        };
        let mut group = Vec::new();
        for facet in Facet::ALL {
            let Some(code_id) = pair.code_for(facet)? else { continue };
            let label = fresh();
            group.push(LabeledItem {
                source_id: policy.id.clone(),
                content: Content::Text { text: policy.text.clone(), facet: Some(facet) },
                label,
            });
            group.push(LabeledItem { source_id: code_id.to_string(), content: code(code_id)?, label });
        }
        for id in pair.irrelevant() {
            group.push(LabeledItem { source_id: id.to_string(), content: code(id)?, label: fresh() });
        }
        out.push(group);
    }
    Ok(out)
}

/// Bug-fix records read as faceted training data.
#[derive(Debug, Clone)]
pub struct BugFixDataset {
    pub corpus: Corpus,
    pub pairs: Vec<QuadrupletPair>,
    /// Quadruplets in `(+, -)` order per accepted record.
    pub quadruplets: Vec<Quadruplet>,
    pub rejected: Vec<String>,
    pub retained_fraction: f64,
}

/// Reinterprets every record, optionally drops non-policy-like comments,
/// and mines one irrelevant snippet per record from the unfiltered pool.
pub fn build_bugfix_dataset<P>(records: &[BugFixRecord], seed: u64, filter: Option<P>) -> Result<BugFixDataset, CorpusError>
where
    P: Fn(&str) -> bool,
{
    let comments: Vec<&str> = records.iter().map(|r| r.comment.as_str()).collect();
    let outcome = match filter {
        Some(pred) => filter_policy_like(&comments, pred),
        None => filter_policy_like(&comments, |_| true),
    };
    let mut corpus = Corpus::default();
    let mut pairs = Vec::new();
    let mut quadruplets = Vec::new();
    let mut rejected = Vec::new();
    let mut minted_codes = HashSet::new();
    let mut accepted = Vec::new();
    for &i in &outcome.retained {
        let record = &records[i];
        match reinterpret_bugfix(record) {
            Ok(fix) => accepted.push((i, fix)),
            Err(_) => rejected.push(record.id.clone()),
        }
    }
    for (_, fix) in &accepted {
        corpus.add_policy(fix.policy.clone())?;
        for s in [&fix.before, &fix.after] {
            minted_codes.insert(s.id.clone());
            corpus.add_snippet(s.clone())?;
        }
    }
    for (i, fix) in accepted {
        let record = &records[i];
        let seed_i = seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let irrelevant = if records.len() >= 2 { Some(mine_irrelevant(&record.id, records, seed_i)?) } else { None };
        if let Some(id) = &irrelevant {
            if !minted_codes.contains(id) {
                // Mined from a record the filter dropped.
                let (rid, after) = split_code_id(id);
                let src = records.iter().find(|r| r.id == rid).expect("mined id from pool");
                let code = if after { &src.code_after } else { &src.code_before };
                corpus.add_snippet(CodeSnippet::new(id.clone(), code.clone()))?;
                minted_codes.insert(id.clone());
            }
        }
        let mut plus = fix.compliant;
        let mut minus = fix.noncompliant;
        plus.irrelevant_code_id = irrelevant.clone();
        minus.irrelevant_code_id = irrelevant;
        quadruplets.push(plus.clone());
        quadruplets.push(minus.clone());
        pairs.push(QuadrupletPair { compliant: Some(plus), noncompliant: Some(minus) });
    }
    Ok(BugFixDataset { corpus, pairs, quadruplets, rejected, retained_fraction: outcome.retained_fraction })
}

fn split_code_id(id: &str) -> (&str, bool) {
    let body = id.strip_prefix("bf:").unwrap_or(id);
    match body.rsplit_once(':') {
        Some((rid, side)) => (rid, side == "after"),
        None => (body, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::bpe::train_bpe;

    fn record(id: &str, comment: &str, before: &str, after: &str) -> BugFixRecord {
        BugFixRecord { id: id.into(), comment: comment.into(), code_before: before.into(), code_after: after.into() }
    }

    fn fig2() -> BugFixRecord {
        record(
            "fig2",
            "Probably better to use `SecureRandom` for anything security related..",
            "private String generatePassword(){\n  Random random=new Random();\n  return password.toString();\n}",
            "private String generatePassword() throws NoSuchAlgorithmException {\n  SecureRandom random=SecureRandom.getInstanceStrong();\n  return new String(password);\n}",
        )
    }

    #[test]
    fn segment_exact_multiple() {
        // Single-character words never merge, so every char is one token.
        let vocab = train_bpe(&["a b c d e f g h i j k l m n o p"], 40).unwrap();
        let even = "a b c d e f g h ";
        assert_eq!(vocab.tokenize_full(even).len(), 16);
        let items = segment_documentation(&[even], 8, &vocab).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].label, items[1].label);
        // 15 tokens: remainder of 7 is at least half a passage.
        assert_eq!(segment_documentation(&["a b c d e f g h"], 8, &vocab).unwrap().len(), 2);
    }

    #[test]
    fn segment_drops_short_remainder_and_separates_paragraphs() {
        let vocab = train_bpe(&["a b c d e f g h i"], 40).unwrap();
        // 9 single-char tokens "a b c d e" -> a,_,b,_,c,_,d,_,e = 9 tokens
        let para = "a b c d e";
        assert_eq!(vocab.tokenize_full(para).len(), 9);
        let items = segment_documentation(&[para], 8, &vocab).unwrap();
        assert_eq!(items.len(), 1);
        let items = segment_documentation(&[para, para], 8, &vocab).unwrap();
        assert_eq!(items.len(), 2);
        assert_ne!(items[0].label, items[1].label);
        assert!(items.iter().all(|i| i.modality() == Modality::Text));
        assert!(segment_documentation(&[para], 7, &vocab).is_err());
        assert!(segment_documentation::<&str>(&[], 8, &vocab).unwrap().is_empty());
    }

    #[test]
    fn fig2_record_reinterpreted() {
        let fix = reinterpret_bugfix(&fig2()).unwrap();
        assert!(fix.policy.text.starts_with("Probably better to use `SecureRandom`"));
        assert_eq!(fix.policy.source, PolicySource::BugfixComment);
        assert!(fix.before.code.contains("new Random()"));
        assert!(fix.after.code.contains("SecureRandom.getInstanceStrong()"));
        assert_eq!(fix.before.facet_for(&fix.policy.id), Some(Facet::Noncompliant));
        assert_eq!(fix.after.facet_for(&fix.policy.id), Some(Facet::Compliant));
        assert_eq!(fix.noncompliant.matching_code_id.as_deref(), Some(fix.before.id.as_str()));
        assert_eq!(fix.compliant.matching_code_id.as_deref(), Some(fix.after.id.as_str()));
        assert_eq!(fix.compliant.policy_id, fix.noncompliant.policy_id);
    }

    #[test]
    fn degenerate_and_empty_records_rejected() {
        assert!(matches!(reinterpret_bugfix(&record("a", "use x", "f()", "f()")), Err(CorpusError::DegenerateFix(_))));
        assert!(matches!(reinterpret_bugfix(&record("a", "  ", "f()", "g()")), Err(CorpusError::EmptyText(_))));
    }

    #[test]
    fn two_records_give_four_quadruplets() {
        let recs = [record("a", "use x please now", "f()", "g()"), record("b", "never call y here", "h()", "k()")];
        let ds = build_bugfix_dataset(&recs, 1, None::<fn(&str) -> bool>).unwrap();
        assert_eq!(ds.quadruplets.len(), 4);
        let ids: HashSet<_> = ds.quadruplets.iter().map(|q| q.policy_id.clone()).collect();
        assert_eq!(ids.len(), 2);
    }

    #[test]
    fn mining_avoids_own_record() {
        let recs = [record("a", "c", "1", "2"), record("b", "c", "3", "4")];
        for seed in 0..20 {
            let id = mine_irrelevant("a", &recs, seed).unwrap();
            assert!(id.starts_with("bf:b:"));
        }
        assert_eq!(mine_irrelevant("a", &recs, 9).unwrap(), mine_irrelevant("a", &recs, 9).unwrap());
        assert!(matches!(mine_irrelevant("a", &recs[..1], 0), Err(CorpusError::PoolTooSmall(1))));
    }

    #[test]
    fn mining_covers_every_other_record() {
        let recs: Vec<_> = (0..10).map(|i| record(&format!("r{i}"), "c", "x", "y")).collect();
        let mut seen = HashSet::new();
        for seed in 0..1000 {
            let id = mine_irrelevant("r0", &recs, seed).unwrap();
            seen.insert(split_code_id(&id).0.to_string());
        }
        assert!(!seen.contains("r0"));
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn filter_predicates() {
        let comments = ["use SecureRandom for security", "lgtm"];
        assert_eq!(filter_policy_like(&comments, |_| true).retained, vec![0, 1]);
        assert!(filter_policy_like(&comments, |_| false).retained.is_empty());
        let out = filter_policy_like(&comments, default_policy_predicate);
        assert_eq!(out.retained, vec![0]);
        assert_eq!(out.retained_fraction, 0.5);
        assert!(default_policy_predicate("Do not log raw passwords"));
        assert!(!default_policy_predicate("nice catch, thanks!"));
        assert!(!default_policy_predicate("because reused variables"));
    }

    fn pair_corpus() -> (Corpus, QuadrupletPair) {
        let fix = reinterpret_bugfix(&record("a", "use x", "f()", "g()")).unwrap();
        let mut corpus = Corpus::default();
        corpus.add_policy(fix.policy.clone()).unwrap();
        corpus.add_snippet(fix.before.clone()).unwrap();
        corpus.add_snippet(fix.after.clone()).unwrap();
        corpus.add_snippet(CodeSnippet::new("irr", "z()")).unwrap();
        let mut plus = fix.compliant;
        let mut minus = fix.noncompliant;
        plus.irrelevant_code_id = Some("irr".into());
        minus.irrelevant_code_id = Some("irr".into());
        (corpus, QuadrupletPair { compliant: Some(plus), noncompliant: Some(minus) })
    }

    #[test]
    fn unpivot_full_pair() {
        let (corpus, pair) = pair_corpus();
        let items = unpivot(&[pair], &corpus).unwrap();
        assert_eq!(items.len(), 5);
        let labels: HashSet<_> = items.iter().map(|i| i.label).collect();
        assert_eq!(labels.len(), 3);
        assert_eq!(items[0].content.facet(), Some(Facet::Compliant));
        assert_eq!(items[0].label, items[1].label);
        assert_eq!(items[1].content.as_str(), "g()");
        assert_eq!(items[2].content.facet(), Some(Facet::Noncompliant));
        assert_eq!(items[3].content.as_str(), "f()");
    }

    #[test]
    fn unpivot_two_pairs_and_partial() {
        let recs = [record("a", "use x please now", "f()", "g()"), record("b", "never call y here", "h()", "k()")];
        let ds = build_bugfix_dataset(&recs, 3, None::<fn(&str) -> bool>).unwrap();
        let items = unpivot(&ds.pairs, &ds.corpus).unwrap();
        assert_eq!(items.len(), 10);
        assert_eq!(items.iter().map(|i| i.label).collect::<HashSet<_>>().len(), 6);

        let (corpus, pair) = pair_corpus();
        let mut minus = pair.noncompliant.unwrap();
        minus.opposite_code_id = None;
        let partial = QuadrupletPair { compliant: None, noncompliant: Some(minus) };
        let items = unpivot(&[partial], &corpus).unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items[0].label, items[1].label);
        assert_ne!(items[2].label, items[0].label);
    }

    #[test]
    fn unpivot_rejects_facet_mismatch() {
        let (corpus, pair) = pair_corpus();
        let swapped = QuadrupletPair { compliant: pair.noncompliant.clone(), noncompliant: pair.compliant.clone() };
        assert!(matches!(unpivot(&[swapped], &corpus), Err(CorpusError::FacetMismatch(_))));
    }

    #[test]
    fn filtered_dataset_is_subset() {
        let recs = [
            record("a", "you should use safe_x here", "raw_x()", "safe_x()"),
            record("b", "lgtm", "p()", "q()"),
            record("c", "avoid raw_y in this loop", "raw_y()", "safe_y()"),
        ];
        let all = build_bugfix_dataset(&recs, 5, None::<fn(&str) -> bool>).unwrap();
        let some = build_bugfix_dataset(&recs, 5, Some(default_policy_predicate)).unwrap();
        assert_eq!(some.quadruplets.len(), 4);
        for q in &some.quadruplets {
            assert!(all.quadruplets.iter().any(|a| a.policy_id == q.policy_id));
        }
        // Irrelevant codes may come from filtered-out records but must resolve.
        unpivot(&some.pairs, &some.corpus).unwrap();
    }
}
