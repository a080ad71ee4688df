//! Seeded synthetic benchmark with planted compliance patterns.
//!
//! Every policy family is built around a topic (two pseudo-words) and a pair
//! of call identifiers `good_w1_w2` / `bad_w1_w2`. Compliant snippets call the
//! good identifier, non-compliant snippets the bad one, and distractors call
//! neither. The generator also emits the auxiliary training sources: bug-fix
//! records for training families (plus non-policy-like noise records that
//! revert fixes), documentation paragraphs and code/comment pairs.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::types::*;
use super::CorpusError;

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ru", "te", "zo", "va", "ne", "pi", "su", "do", "ga", "fe", "hu", "ji", "bo", "ry", "xi", "qu", "wa",
];
const GOOD_PREFIXES: [&str; 6] = ["safe", "checked", "strict", "verified", "secure", "guarded"];
const BAD_PREFIXES: [&str; 6] = ["raw", "legacy", "loose", "weak", "naive", "blind"];
const VERBS: [&str; 12] = ["load", "parse", "build", "read", "write", "update", "render", "fetch", "store", "merge", "split", "format"];
const VARS: [&str; 12] = ["data", "buf", "item", "value", "result", "ctx", "conn", "req", "node", "entry", "key", "payload"];
const NOUNS: [&str; 10] = ["cache", "session", "record", "stream", "config", "buffer", "table", "queue", "token", "index"];

const CODE_TEMPLATES: [&str; 6] = [
    "let {v1} = {call}({v2});\nreturn {v1};",
    "fn handle({v2}: Input) -> Output {\n    let {v1} = {noise}({v2});\n    {call}(&{v1})\n}",
    "for {v1} in {v2}.iter() {\n    {call}({v1});\n}",
    "if let Some({v1}) = {noise}({v2}) {\n    {call}({v1})?;\n}",
    "match {call}({v2}) {\n    Ok({v1}) => {v1},\n    Err(e) => return Err(e),\n}",
    "let {v1} = {noise}(&{v2});\nlet out = {call}({v1}, {v2});\nout.finish()",
];

const POLICY_TEMPLATES: [&str; 4] = [
    "Prefer {good} over {bad} when handling {w1} {w2} values.",
    "Use {good} instead of {bad} for {w1} {w2} operations.",
    "Code working with {w1} {w2} must call {good} rather than {bad}.",
    "Never call {bad} on {w1} {w2} input; call {good} instead.",
];

const REVIEW_TEMPLATES: [&str; 5] = [
    "You should use {good} here instead of {bad}.",
    "Please avoid {bad}; {good} handles {w1} {w2} correctly.",
    "Never call {bad} on {w1} data, prefer {good}.",
    "We must switch from {bad} to {good} for {w2} handling.",
    "Do not rely on {bad} for {w1} {w2}, {good} is required.",
];

/// Comments that fail the default policy-likeness heuristic.
const NOISE_TEMPLATES: [&str; 5] = [
    "lgtm, reverting {good} for now",
    "thanks, {good} was reverted here",
    "minor cleanup around {w1} {w2} ok",
    "lgtm",
    "nice catch on the {w2} rename",
];

const COMMENT_TEMPLATES: [&str; 3] = [
    "consider {good} instead of {bad} here",
    "this {bad} call on {w1} {w2} looks risky, {good} is safer",
    "{bad} skips validation of {w1} {w2}",
];

const DOC_SENTENCES: [&str; 6] = [
    "The {w} component manages {noun} state for the runtime.",
    "Every {w} handle is tied to one {noun} and must be closed.",
    "Configure {w} through the {noun} settings before the first request.",
    "Errors raised by {w} carry the {noun} identifier.",
    "The {w} module exposes helpers for {noun} lookups.",
    "A {w} instance may be shared between threads that read the {noun}.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_families: usize,
    /// Families reserved for zero-shot evaluation.
    pub n_heldout: usize,
    pub snippets_per_family: usize,
    pub n_distractors: usize,
    /// Bug-fix records per training family.
    pub fixes_per_family: usize,
    /// Noise records as a fraction of genuine fixes.
    pub noise_fraction: f64,
    pub cc_pairs: usize,
    pub doc_sentences: usize,
}

impl SynthConfig {
    pub fn new(seed: u64, n_families: usize, snippets_per_family: usize, n_distractors: usize) -> Self {
        Self {
            seed,
            n_families,
            n_heldout: n_families / 3,
            snippets_per_family,
            n_distractors,
            fixes_per_family: 8,
            noise_fraction: 0.3,
            cc_pairs: 240,
            doc_sentences: 12,
        }
    }

    pub fn with_heldout(mut self, n_heldout: usize) -> Self {
        self.n_heldout = n_heldout;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub id: String,
    pub policy_id: String,
    pub topic: (String, String),
    pub good: String,
    pub bad: String,
    pub heldout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeComment {
    pub id: String,
    pub code: String,
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub config: SynthConfig,
    pub families: Vec<Family>,
    pub policies: Vec<Policy>,
    /// Family snippets followed by distractors.
    pub snippets: Vec<CodeSnippet>,
    /// Fixes for training families, with noise records interleaved.
    pub bugfixes: Vec<BugFixRecord>,
    /// Family id per bug-fix record; `None` for noise.
    pub bugfix_family: Vec<Option<String>>,
    pub docs: Vec<String>,
    pub cc_pairs: Vec<CodeComment>,
}

impl SyntheticData {
    pub fn train_families(&self) -> impl Iterator<Item = &Family> {
        self.families.iter().filter(|f| !f.heldout)
    }

    pub fn heldout_families(&self) -> impl Iterator<Item = &Family> {
        self.families.iter().filter(|f| f.heldout)
    }

    /// Policies of the given families, their labeled snippets and all distractors.
    pub fn benchmark_for(&self, family_ids: &HashSet<&str>) -> Result<Corpus, CorpusError> {
        let policy_ids: HashSet<&str> = self
            .families
            .iter()
            .filter(|f| family_ids.contains(f.id.as_str()))
            .map(|f| f.policy_id.as_str())
            .collect();
        let policies = self.policies.iter().filter(|p| policy_ids.contains(p.id.as_str())).cloned().collect();
        let snippets = self
            .snippets
            .iter()
            .filter(|s| s.ground_truth.is_empty() || s.ground_truth.iter().any(|g| policy_ids.contains(g.policy_id.as_str())))
            .cloned()
            .collect();
        Corpus::new(policies, snippets)
    }

    /// Zero-shot benchmark over the held-out families.
    pub fn heldout_benchmark(&self) -> Result<Corpus, CorpusError> {
        let ids: HashSet<&str> = self.heldout_families().map(|f| f.id.as_str()).collect();
        self.benchmark_for(&ids)
    }

    pub fn full_corpus(&self) -> Result<Corpus, CorpusError> {
        Corpus::new(self.policies.clone(), self.snippets.clone())
    }

    /// Every text the generator produced, for tokenizer training.
    pub fn all_texts(&self) -> Vec<String> {
        let mut out: Vec<String> = self.policies.iter().map(|p| p.text.clone()).collect();
        out.extend(self.snippets.iter().map(|s| s.code.clone()));
        for r in &self.bugfixes {
            out.push(r.comment.clone());
            out.push(r.code_before.clone());
            out.push(r.code_after.clone());
        }
        out.extend(self.docs.iter().cloned());
        for p in &self.cc_pairs {
            out.push(p.code.clone());
            out.push(p.comment.clone());
        }
        out
    }
}

struct Gen {
    rng: ChaCha8Rng,
    words: Vec<String>,
}

impl Gen {
    fn pick<'a>(&mut self, xs: &[&'a str]) -> &'a str {
        xs[self.rng.gen_range(0..xs.len())]
    }

    fn word(&mut self) -> String {
        self.words[self.rng.gen_range(0..self.words.len())].clone()
    }

    fn noise_call(&mut self) -> String {
        let verb = self.pick(&VERBS);
        format!("{verb}_{}", self.word())
    }

    fn code(&mut self, call: &str) -> String {
        let template = self.pick(&CODE_TEMPLATES);
        self.code_with(template, call)
    }

    fn code_with(&mut self, template: &str, call: &str) -> String {
        let v1 = self.pick(&VARS);
        let mut v2 = self.pick(&VARS);
        while v2 == v1 {
            v2 = self.pick(&VARS);
        }
        let noise = self.noise_call();
        template.replace("{call}", call).replace("{noise}", &noise).replace("{v1}", v1).replace("{v2}", v2)
    }
}

fn fill(template: &str, good: &str, bad: &str, w1: &str, w2: &str) -> String {
    template.replace("{good}", good).replace("{bad}", bad).replace("{w1}", w1).replace("{w2}", w2)
}

fn pseudo_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..3).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Generates the benchmark and its auxiliary training sources.
pub fn synth_corpus(config: &SynthConfig) -> Result<SyntheticData, CorpusError> {
    if config.n_families == 0 || config.snippets_per_family == 0 {
        return Err(CorpusError::InvalidSynthConfig("counts must be at least 1".into()));
    }
    if config.n_heldout > config.n_families {
        return Err(CorpusError::InvalidSynthConfig("more held-out than total families".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_words = (config.n_families * 8 / 5).max(4);
    let words = pseudo_words(&mut rng, n_words);
    let mut g = Gen { rng, words };

    // Distinct unordered topic pairs.
    let mut topics: Vec<(String, String)> = Vec::new();
    let mut used = HashSet::new();
    while topics.len() < config.n_families {
        let a = g.word();
        let b = g.word();
        if a == b {
            continue;
        }
        let key = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        if used.insert(key) {
            topics.push((a, b));
        }
    }
    let mut order: Vec<usize> = (0..config.n_families).collect();
    order.shuffle(&mut g.rng);
    let heldout: HashSet<usize> = order[..config.n_heldout].iter().copied().collect();

    let mut families = Vec::new();
    let mut policies = Vec::new();
    let mut snippets = Vec::new();
    for (k, (w1, w2)) in topics.iter().enumerate() {
        let gp = g.pick(&GOOD_PREFIXES);
        let bp = g.pick(&BAD_PREFIXES);
        let good = format!("{gp}_{w1}_{w2}");
        let bad = format!("{bp}_{w1}_{w2}");
        let fam = Family {
            id: format!("fam{k:03}"),
            policy_id: format!("policy{k:03}"),
            topic: (w1.clone(), w2.clone()),
            good: good.clone(),
            bad: bad.clone(),
            heldout: heldout.contains(&k),
        };
        let template = g.pick(&POLICY_TEMPLATES);
        policies.push(Policy::new(fam.policy_id.clone(), fill(template, &good, &bad, w1, w2), PolicySource::Synthetic)?);
        for j in 0..config.snippets_per_family {
            let facet = if j % 2 == 0 { Facet::Compliant } else { Facet::Noncompliant };
            let call = if facet == Facet::Compliant { &good } else { &bad };
            let code = g.code(call);
            snippets.push(CodeSnippet::new(format!("{}-s{j:03}", fam.id), code).with_truth(&fam.policy_id, facet));
        }
        families.push(fam);
    }
    for j in 0..config.n_distractors {
        let w1 = g.word();
        let w2 = g.word();
        let verb = g.pick(&VERBS);
        let code = g.code(&format!("{verb}_{w1}_{w2}"));
        snippets.push(CodeSnippet::new(format!("distractor{j:05}"), code));
    }

    let mut bugfixes = Vec::new();
    let mut bugfix_family = Vec::new();
    let train: Vec<&Family> = families.iter().filter(|f| !f.heldout).collect();
    for fam in &train {
        let (w1, w2) = (&fam.topic.0, &fam.topic.1);
        for j in 0..config.fixes_per_family {
            let template = g.pick(&CODE_TEMPLATES);
            let before = g.code_with(template, &fam.bad);
            let after = before.replace(&fam.bad, &fam.good);
            let comment = fill(g.pick(&REVIEW_TEMPLATES), &fam.good, &fam.bad, w1, w2);
            bugfixes.push(BugFixRecord { id: format!("{}-fix{j:02}", fam.id), comment, code_before: before, code_after: after });
            bugfix_family.push(Some(fam.id.clone()));
        }
    }
    let n_noise = (bugfixes.len() as f64 * config.noise_fraction).round() as usize;
    if !train.is_empty() {
        for j in 0..n_noise {
            let fam = train[g.rng.gen_range(0..train.len())];
            let template = g.pick(&CODE_TEMPLATES);
            // Reverted fixes: the "before" side is the compliant call.
            let before = g.code_with(template, &fam.good);
            let after = before.replace(&fam.good, &fam.bad);
            let comment = fill(g.pick(&NOISE_TEMPLATES), &fam.good, &fam.bad, &fam.topic.0, &fam.topic.1);
            let at = g.rng.gen_range(0..=bugfixes.len());
            bugfixes.insert(at, BugFixRecord { id: format!("noise{j:04}"), comment, code_before: before, code_after: after });
            bugfix_family.insert(at, None);
        }
    }

    let mut docs = Vec::new();
    for w in g.words.clone() {
        let mut sentences = Vec::with_capacity(config.doc_sentences);
        for _ in 0..config.doc_sentences {
            let s = g.pick(&DOC_SENTENCES);
            let noun = g.pick(&NOUNS);
            sentences.push(s.replace("{w}", &w).replace("{noun}", noun));
        }
        docs.push(sentences.join(" "));
    }

    let family_topics: HashSet<(String, String)> = families.iter().map(|f| f.topic.clone()).collect();
    let mut cc_pairs = Vec::new();
    while cc_pairs.len() < config.cc_pairs {
        let (w1, w2) = (g.word(), g.word());
        if w1 == w2 || family_topics.contains(&(w1.clone(), w2.clone())) || family_topics.contains(&(w2.clone(), w1.clone())) {
            continue;
        }
        let gp = g.pick(&GOOD_PREFIXES);
        let bp = g.pick(&BAD_PREFIXES);
        let good = format!("{gp}_{w1}_{w2}");
        let bad = format!("{bp}_{w1}_{w2}");
        let code = g.code(&bad);
        let comment = fill(g.pick(&COMMENT_TEMPLATES), &good, &bad, &w1, &w2);
        cc_pairs.push(CodeComment { id: format!("cc{:04}", cc_pairs.len()), code, comment });
    }

    Ok(SyntheticData { config: config.clone(), families, policies, snippets, bugfixes, bugfix_family, docs, cc_pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::reinterpret::default_policy_predicate;

    fn small(seed: u64) -> SyntheticData {
        synth_corpus(&SynthConfig::new(seed, 9, 6, 20)).unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let a = small(7);
        let b = small(7);
        assert_eq!(a, b);
        assert_ne!(a.snippets, small(8).snippets);
    }

    #[test]
    fn no_distractors_means_all_labeled() {
        let d = synth_corpus(&SynthConfig::new(1, 4, 4, 0)).unwrap();
        assert!(d.snippets.iter().all(|s| !s.ground_truth.is_empty()));
    }

    #[test]
    fn planted_patterns_match_facets() {
        let d = small(3);
        for s in &d.snippets {
            match s.ground_truth.first() {
                Some(gt) => {
                    let fam = d.families.iter().find(|f| f.policy_id == gt.policy_id).unwrap();
                    let (want, avoid) = match gt.facet {
                        Facet::Compliant => (&fam.good, &fam.bad),
                        Facet::Noncompliant => (&fam.bad, &fam.good),
                    };
                    assert!(s.code.contains(want.as_str()) && !s.code.contains(avoid.as_str()), "{}", s.id);
                }
                None => {
                    for fam in &d.families {
                        assert!(!s.code.contains(&fam.good) && !s.code.contains(&fam.bad));
                    }
                }
            }
        }
    }

    #[test]
    fn heldout_split_and_benchmark() {
        let d = small(4);
        assert_eq!(d.heldout_families().count(), 3);
        let bench = d.heldout_benchmark().unwrap();
        assert_eq!(bench.policies().len(), 3);
        assert_eq!(bench.snippets().len(), 3 * 6 + 20);
        // No bug-fix record touches a held-out family.
        let held: HashSet<_> = d.heldout_families().map(|f| f.id.clone()).collect();
        assert!(d.bugfix_family.iter().flatten().all(|f| !held.contains(f)));
    }

    #[test]
    fn noise_comments_fail_default_filter_and_fixes_pass() {
        let d = small(5);
        for (r, fam) in d.bugfixes.iter().zip(&d.bugfix_family) {
            assert_eq!(default_policy_predicate(&r.comment), fam.is_some(), "{}", r.comment);
            assert_ne!(r.code_before, r.code_after);
        }
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(synth_corpus(&SynthConfig::new(1, 0, 4, 0)).is_err());
        assert!(synth_corpus(&SynthConfig::new(1, 2, 4, 0).with_heldout(3)).is_err());
    }
}
