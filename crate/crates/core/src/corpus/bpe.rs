//! Character-level byte-pair encoding.
//!
//! Text is first split into pre-tokens (alphanumeric runs, whitespace runs,
//! and single punctuation characters); merges never cross a pre-token
//! boundary, so concatenating the decoded pieces restores the input.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CorpusError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SEP: u32 = 2;
pub const FACET_COMPLIANT: u32 = 3;
pub const FACET_NONCOMPLIANT: u32 = 4;

const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[SEP]", "[FACET+]", "[FACET-]"];
pub const RESERVED_COUNT: usize = RESERVED.len();

pub const DEFAULT_MAX_SEQ_LEN: usize = 128;
const VOCAB_FORMAT: u32 = 1;

/// Trained BPE vocabulary. Immutable once built.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    char_to_id: HashMap<char, u32>,
    /// `(left, right) -> (rank, merged id)`
    merge_ranks: HashMap<(u32, u32), (usize, u32)>,
    pub max_seq_len: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: u32,
    max_seq_len: usize,
    alphabet: Vec<String>,
    merges: Vec<(String, String)>,
    reserved: BTreeMap<String, u32>,
}

/// Splits text into merge domains. Concatenation of the pieces is the input.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    #[derive(PartialEq, Clone, Copy)]
    enum Class {
        Word,
        Space,
        Other,
    }
    let class = |c: char| {
        if c.is_alphanumeric() {
            Class::Word
        } else if c.is_whitespace() {
            Class::Space
        } else {
            Class::Other
        }
    };
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev: Option<Class> = None;
    for (i, c) in text.char_indices() {
        let cls = class(c);
        if let Some(p) = prev {
            if p != cls || cls == Class::Other {
                out.push(&text[start..i]);
                start = i;
            }
        }
        prev = Some(cls);
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

impl Vocabulary {
    fn from_parts(alphabet: Vec<char>, merges: Vec<(String, String)>, max_seq_len: usize) -> Result<Self, CorpusError> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, u32> = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            token_to_id.insert(t.clone(), i as u32);
        }
        let mut char_to_id = HashMap::new();
        for &c in &alphabet {
            let s = c.to_string();
            if token_to_id.contains_key(&s) {
                return Err(CorpusError::InvalidVocabulary(format!("duplicate alphabet symbol {c:?}")));
            }
            let id = tokens.len() as u32;
            token_to_id.insert(s.clone(), id);
            char_to_id.insert(c, id);
            tokens.push(s);
        }
        let mut merge_ranks = HashMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            let (Some(&li), Some(&ri)) = (token_to_id.get(l), token_to_id.get(r)) else {
                return Err(CorpusError::InvalidVocabulary(format!("merge references unknown token {l:?}+{r:?}")));
            };
            if li < RESERVED_COUNT as u32 || ri < RESERVED_COUNT as u32 {
                return Err(CorpusError::InvalidVocabulary("merge over reserved token".into()));
            }
            let merged = format!("{l}{r}");
            let id = match token_to_id.get(&merged) {
                Some(&id) => id,
                None => {
                    let id = tokens.len() as u32;
                    token_to_id.insert(merged.clone(), id);
                    tokens.push(merged);
                    id
                }
            };
            merge_ranks.entry((li, ri)).or_insert((rank, id));
        }
        Ok(Self { alphabet, merges, tokens, token_to_id, char_to_id, merge_ranks, max_seq_len })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn with_max_seq_len(mut self, max_seq_len: usize) -> Self {
        self.max_seq_len = max_seq_len;
        self
    }

    /// Token ids for `text`, truncated from the tail to `max_seq_len`.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = self.tokenize_full(text);
        ids.truncate(self.max_seq_len);
        ids
    }

    /// Token ids for `text` without truncation.
    pub fn tokenize_full(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in pre_tokenize(text) {
            self.encode_word(word, &mut out);
        }
        out
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = word.chars().map(|c| self.char_to_id.get(&c).copied().unwrap_or(UNK)).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, w[0], w[1], id)))
                .min_by_key(|&(rank, ..)| rank);
            let Some((_, l, r, id)) = best else { break };
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    merged.push(id);
                    i += 2;
                } else {
                    merged.push(syms[i]);
                    i += 1;
                }
            }
            syms = merged;
        }
        out.extend(syms);
    }

    /// Concatenates token strings. Reserved ids decode to nothing.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id as usize >= RESERVED_COUNT)
            .filter_map(|&id| self.token(id))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            format: VOCAB_FORMAT,
            max_seq_len: self.max_seq_len,
            alphabet: self.alphabet.iter().map(|c| c.to_string()).collect(),
            merges: self.merges.clone(),
            reserved: RESERVED.iter().enumerate().map(|(i, s)| (s.to_string(), i as u32)).collect(),
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        let file: VocabFile = serde_json::from_str(json).map_err(|e| CorpusError::InvalidVocabulary(e.to_string()))?;
        if file.format != VOCAB_FORMAT {
            return Err(CorpusError::InvalidVocabulary(format!("unsupported format {}", file.format)));
        }
        for (i, name) in RESERVED.iter().enumerate() {
            if file.reserved.get(*name) != Some(&(i as u32)) {
                return Err(CorpusError::InvalidVocabulary(format!("reserved id mismatch for {name}")));
            }
        }
        let mut alphabet = Vec::with_capacity(file.alphabet.len());
        for s in &file.alphabet {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => alphabet.push(c),
                _ => return Err(CorpusError::InvalidVocabulary(format!("alphabet entry {s:?} is not one symbol"))),
            }
        }
        Self::from_parts(alphabet, file.merges, file.max_seq_len)
    }

    /// Hex SHA-256 of the serialized vocabulary.
    pub fn hash(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Learns merges from `texts` until the vocabulary holds `vocab_size` tokens
/// or no adjacent pair occurs at least twice.
///
/// Merge frequency ties go to the lexicographically smaller `(left, right)` pair.
pub fn train_bpe<S: AsRef<str>>(texts: &[S], vocab_size: usize) -> Result<Vocabulary, CorpusError> {
    let mut word_counts: HashMap<&str, usize> = HashMap::new();
    for t in texts {
        for w in pre_tokenize(t.as_ref()) {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut alphabet: Vec<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    if vocab_size <= alphabet.len() + RESERVED_COUNT {
        return Err(CorpusError::VocabTooSmall { requested: vocab_size, minimum: alphabet.len() + RESERVED_COUNT + 1 });
    }

    let mut symbols: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let sym_id: HashMap<char, usize> = alphabet.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut known: HashMap<String, usize> = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();

    // Sorted so that training is independent of hash-map iteration order.
    let mut words: Vec<(Vec<usize>, usize)> = {
        let mut ws: Vec<(&str, usize)> = word_counts.into_iter().collect();
        ws.sort_unstable();
        ws.into_iter().map(|(w, n)| (w.chars().map(|c| sym_id[&c]).collect(), n)).collect()
    };

    let mut merges = Vec::new();
    let mut token_count = alphabet.len() + RESERVED_COUNT;
    while token_count < vocab_size {
        let mut pair_counts: HashMap<(usize, usize), usize> = HashMap::new();
        for (syms, n) in &words {
            for w in syms.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best = pair_counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&symbols[pa.0], &symbols[pa.1]);
                let kb = (&symbols[pb.0], &symbols[pb.1]);
                kb.cmp(&ka)
            })
        });
        let Some(((l, r), count)) = best else { break };
        if count < 2 {
            break;
        }
        let merged = format!("{}{}", symbols[l], symbols[r]);
        let new_id = match known.get(&merged) {
            Some(&id) => id,
            None => {
                symbols.push(merged.clone());
                known.insert(merged, symbols.len() - 1);
                token_count += 1;
                symbols.len() - 1
            }
        };
        merges.push((symbols[l].clone(), symbols[r].clone()));
        for (syms, _) in &mut words {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }
    Vocabulary::from_parts(alphabet, merges, DEFAULT_MAX_SEQ_LEN)
}
