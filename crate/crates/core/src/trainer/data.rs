use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::corpus::{unpivot_grouped, BugFixDataset, CodeComment, Content, Facet, Label, LabeledItem, Vocabulary};
use crate::encoder::{EncodeInput, InputKind};
use crate::losses::QuadrupletIndex;

/// A tokenized, labeled training item.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub input: EncodeInput,
    pub label: Label,
}

/// Items that always travel together in one batch: a paragraph's passages,
/// a code/comment pair, or an un-pivoted quadruplet pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainUnit {
    /// Split and batching key. Units sharing a group are never placed in
    /// the same batch and always land on the same side of a split.
    pub group: String,
    pub items: Vec<TrainItem>,
    /// Quadruplets over `items`, for the quadruplet loss.
    pub quads: Vec<QuadrupletIndex>,
}

fn item(vocab: &Vocabulary, l: &LabeledItem) -> Option<TrainItem> {
    let input = EncodeInput::from_labeled(l, vocab);
    (!input.tokens.is_empty()).then_some(TrainItem { input, label: l.label })
}

/// One unit per paragraph label.
pub fn doc_units(passages: &[LabeledItem], vocab: &Vocabulary) -> Vec<TrainUnit> {
    let mut by_label: BTreeMap<Label, Vec<TrainItem>> = BTreeMap::new();
    for p in passages {
        if let Some(it) = item(vocab, p) {
            by_label.entry(p.label).or_default().push(it);
        }
    }
    by_label
        .into_iter()
        .map(|(label, items)| TrainUnit { group: format!("doc:{}", label.0), items, quads: Vec::new() })
        .collect()
}

/// One unit per `(code, comment)` pair, sharing a label. Also returns how
/// many pairs repeat an earlier comment verbatim.
pub fn cc_units(pairs: &[CodeComment], vocab: &Vocabulary) -> (Vec<TrainUnit>, usize) {
    let mut seen = HashSet::new();
    let mut duplicates = 0;
    let mut units = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        if !seen.insert(p.comment.as_str()) {
            duplicates += 1;
        }
        let label = Label(i as u64);
        let code = EncodeInput::new(format!("{}:code", p.id), vocab.tokenize(&p.code), InputKind::Code);
        let text = EncodeInput::new(format!("{}:comment", p.id), vocab.tokenize(&p.comment), InputKind::Text);
        if code.tokens.is_empty() || text.tokens.is_empty() {
            continue;
        }
        units.push(TrainUnit {
            group: format!("cc:{}", p.id),
            items: vec![TrainItem { input: code, label }, TrainItem { input: text, label }],
            quads: Vec::new(),
        });
    }
    if duplicates > 0 {
        log::warn!("{duplicates} code/comment pairs repeat an earlier comment");
    }
    (units, duplicates)
}

/// Derives the quadruplets of an un-pivoted pair from its item kinds.
fn quads_of(items: &[TrainItem]) -> Vec<QuadrupletIndex> {
    let policy = |f: Facet| items.iter().position(|x| x.input.kind == InputKind::Policy(f));
    let code_with = |label: Label| items.iter().position(|x| x.input.kind == InputKind::Code && x.label == label);
    let irrelevant = items.iter().position(|x| {
        x.input.kind == InputKind::Code && items.iter().filter(|y| y.label == x.label).count() == 1
    });
    let mut out = Vec::new();
    let (Some(rp), Some(rm), Some(irr)) = (policy(Facet::Compliant), policy(Facet::Noncompliant), irrelevant) else {
        return out;
    };
    let (Some(cp), Some(cm)) = (code_with(items[rp].label), code_with(items[rm].label)) else {
        return out;
    };
    out.push(QuadrupletIndex { facet: Facet::Compliant, anchor: rp, matching: cp, opposite: cm, irrelevant: irr });
    out.push(QuadrupletIndex { facet: Facet::Noncompliant, anchor: rm, matching: cm, opposite: cp, irrelevant: irr });
    out
}

/// One unit per quadruplet pair, grouped by minted policy id.
pub fn bugfix_units(dataset: &BugFixDataset, vocab: &Vocabulary) -> Result<Vec<TrainUnit>, TrainError> {
    let groups = unpivot_grouped(&dataset.pairs, &dataset.corpus)?;
    let mut units = Vec::with_capacity(groups.len());
    for g in groups {
        let group = g
            .iter()
            .find(|x| matches!(x.content, Content::Text { .. }))
            .map(|x| x.source_id.clone())
            .unwrap_or_else(|| g[0].source_id.clone());
        let items: Vec<TrainItem> = g.iter().filter_map(|l| item(vocab, l)).collect();
        let quads = quads_of(&items);
        units.push(TrainUnit { group, items, quads });
    }
    Ok(units)
}

/// Deterministic split by whole groups; `ratio` of the groups go to training.
pub fn split<T: Clone>(items: &[T], group_of: impl Fn(&T) -> &str, ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), TrainError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TrainError::InvalidConfig(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut groups: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for it in items {
        let g = group_of(it);
        if seen.insert(g) {
            groups.push(g);
        }
    }
    if groups.len() < 2 {
        return Err(TrainError::TooFewGroups(groups.len()));
    }
    groups.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let n_train = ((groups.len() as f64 * ratio).round() as usize).clamp(1, groups.len() - 1);
    let train_groups: HashSet<&str> = groups[..n_train].iter().copied().collect();
    let (train, val): (Vec<&T>, Vec<&T>) = items.iter().partition(|it| train_groups.contains(group_of(it)));
    Ok((train.into_iter().cloned().collect(), val.into_iter().cloned().collect()))
}

pub fn split_units(units: &[TrainUnit], ratio: f64, seed: u64) -> Result<(Vec<TrainUnit>, Vec<TrainUnit>), TrainError> {
    split(units, |u| u.group.as_str(), ratio, seed)
}

/// A composed batch ready for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<EncodeInput>,
    pub labels: Vec<Label>,
    pub quads: Vec<QuadrupletIndex>,
}

/// Fills batches with whole units, in `order`, until each holds at least
/// `batch_size` items. A unit whose group is already present waits for the
/// next batch. Labels are renumbered per unit so units never share labels.
pub fn compose_batches(units: &[TrainUnit], order: &[usize], batch_size: usize) -> Vec<Batch> {
    let mut pending: Vec<usize> = order.to_vec();
    let mut batches = Vec::new();
    while !pending.is_empty() {
        let mut batch = Batch { inputs: Vec::new(), labels: Vec::new(), quads: Vec::new() };
        let mut groups = HashSet::new();
        let mut deferred = Vec::new();
        let mut next_label = 0u64;
        let mut iter = pending.into_iter();
        for u in iter.by_ref() {
            let unit = &units[u];
            if !groups.insert(unit.group.as_str()) {
                deferred.push(u);
                continue;
            }
            let offset = batch.inputs.len();
            let mut relabel: HashMap<Label, Label> = HashMap::new();
            for it in &unit.items {
                let l = *relabel.entry(it.label).or_insert_with(|| {
                    next_label += 1;
                    Label(next_label - 1)
                });
                batch.inputs.push(it.input.clone());
                batch.labels.push(l);
            }
            batch.quads.extend(unit.quads.iter().map(|q| QuadrupletIndex {
                facet: q.facet,
                anchor: q.anchor + offset,
                matching: q.matching + offset,
                opposite: q.opposite + offset,
                irrelevant: q.irrelevant + offset,
            }));
            if batch.inputs.len() >= batch_size {
                break;
            }
        }
        deferred.extend(iter);
        pending = deferred;
        if !batch.inputs.is_empty() {
            batches.push(batch);
        }
    }
    batches
}
