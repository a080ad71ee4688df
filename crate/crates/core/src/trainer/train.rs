use std::collections::HashMap;
use std::fmt::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{compose_batches, split_units, Batch, TrainUnit};
use super::optim::Sgd;
use super::{LossMode, TrainConfig, TrainError};
use crate::assessor::mrr;
use crate::corpus::Label;
use crate::encoder::{evaluate_objective, forward_backward, InputKind, Model};
use crate::losses::{BmtLoss, EmbeddingLoss, QuadrupletLoss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: String,
    pub epochs: Vec<EpochRecord>,
    /// 0 means the starting parameters were kept.
    pub best_epoch: usize,
    pub initial_val_mrr: Option<f64>,
    pub stopped_early: bool,
    pub train_units: usize,
    pub val_units: usize,
    pub final_params_hash: String,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss,val_mrr`; missing validation values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_mrr\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, opt(e.val_loss), opt(e.val_mrr));
        }
        out
    }

    pub fn best_val_mrr(&self) -> Option<f64> {
        if self.best_epoch == 0 {
            self.initial_val_mrr
        } else {
            self.epochs.get(self.best_epoch - 1).and_then(|e| e.val_mrr)
        }
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch.checked_sub(1)?).and_then(|e| e.val_loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    Triplet,
    Quadruplet,
}

fn batch_loss(batch: &Batch, config: &TrainConfig, objective: Objective) -> Option<Box<dyn EmbeddingLoss<f64>>> {
    match objective {
        Objective::Triplet => Some(Box::new(
            BmtLoss::new(batch.labels.clone(), config.margins.alpha, config.mining)
                .with_reduction(config.reduction)
                .with_distance(config.distance),
        )),
        Objective::Quadruplet if batch.quads.is_empty() => None,
        Objective::Quadruplet => {
            let mut l = QuadrupletLoss::new(batch.quads.clone(), batch.inputs.len(), &config.margins).with_reduction(config.reduction);
            l.distance = config.distance;
            Some(Box::new(l))
        }
    }
}

fn has_valid_triplet(labels: &[Label]) -> bool {
    let mut counts: HashMap<Label, usize> = HashMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    counts.len() >= 2 && counts.values().any(|&c| c >= 2)
}

/// Retrieval MRR inside the validation units. Policy items query the code
/// items; without policies every item queries every other item. A hit is an
/// item sharing the query's unit-local label.
pub fn validation_mrr(model: &Model<f64>, units: &[TrainUnit]) -> Result<Option<f64>, TrainError> {
    struct Entry {
        key: (String, InputKind),
        labels: Vec<(usize, Label)>,
        emb: Vec<f64>,
    }
    let mut entries: Vec<Entry> = Vec::new();
    let mut position: HashMap<(String, InputKind), usize> = HashMap::new();
    for (u, unit) in units.iter().enumerate() {
        for it in &unit.items {
            let key = (it.input.id.clone(), it.input.kind);
            match position.get(&key) {
                Some(&i) => entries[i].labels.push((u, it.label)),
                None => {
                    position.insert(key.clone(), entries.len());
                    entries.push(Entry { key, labels: vec![(u, it.label)], emb: model.encode(&it.input)? });
                }
            }
        }
    }
    let is_policy = |e: &Entry| matches!(e.key.1, InputKind::Policy(_));
    let policy_mode = entries.iter().any(is_policy);
    let mut ranks = Vec::new();
    for (qi, q) in entries.iter().enumerate() {
        if policy_mode && !is_policy(q) {
            continue;
        }
        let candidates: Vec<usize> = (0..entries.len())
            .filter(|&j| j != qi && (!policy_mode || entries[j].key.1 == InputKind::Code))
            .collect();
        for &(u, label) in &q.labels {
            let hit = |j: usize| entries[j].labels.contains(&(u, label));
            if !candidates.iter().any(|&j| hit(j)) {
                continue;
            }
            let mut scored: Vec<(f64, usize)> = candidates
                .iter()
                .map(|&j| (q.emb.iter().zip(&entries[j].emb).map(|(a, b)| (a - b) * (a - b)).sum(), j))
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            ranks.push(scored.iter().position(|&(_, j)| hit(j)).expect("hit present") + 1);
        }
    }
    Ok(if ranks.is_empty() { None } else { Some(mrr(&ranks).expect("non-empty ranks")) })
}

fn validation_loss(model: &Model<f64>, batches: &[Batch], config: &TrainConfig, objective: Objective) -> Result<Option<f64>, TrainError> {
    let mut total = 0.0;
    let mut n = 0;
    for b in batches {
        if let Some(loss) = batch_loss(b, config, objective) {
            total += evaluate_objective(model, &b.inputs, loss.as_ref(), config.regularizers())?.0;
            n += 1;
        }
    }
    Ok((n > 0).then(|| total / n as f64))
}

fn improves(mrr: Option<f64>, loss: Option<f64>, best: (Option<f64>, Option<f64>)) -> bool {
    match (mrr, best.0) {
        (Some(m), Some(b)) if m > b + 1e-12 => true,
        (Some(m), Some(b)) if (m - b).abs() <= 1e-12 => matches!((loss, best.1), (Some(l), Some(bl)) if l < bl) || best.1.is_none(),
        (Some(_), None) => true,
        (None, None) => matches!((loss, best.1), (Some(l), Some(bl)) if l < bl) || best.1.is_none(),
        _ => false,
    }
}

fn run(
    stage: &str,
    model: &mut Model<f64>,
    train: &[TrainUnit],
    val: &[TrainUnit],
    config: &TrainConfig,
    objective: Objective,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let start = Instant::now();
    let salt = stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ salt);
    let natural: Vec<usize> = (0..train.len()).collect();
    if config.epochs > 0 {
        let probe = compose_batches(train, &natural, config.batch_size);
        match objective {
            Objective::Triplet if !probe.iter().any(|b| has_valid_triplet(&b.labels)) => return Err(TrainError::DegenerateCorpus),
            Objective::Quadruplet if !train.iter().any(|u| !u.quads.is_empty()) => return Err(TrainError::NoFacetCoverage),
            _ => {}
        }
    }
    let val_order: Vec<usize> = (0..val.len()).collect();
    let val_batches = compose_batches(val, &val_order, config.batch_size);
    let evaluate_val = |m: &Model<f64>| -> Result<(Option<f64>, Option<f64>), TrainError> {
        if val.is_empty() {
            return Ok((None, None));
        }
        Ok((validation_mrr(m, val)?, validation_loss(m, &val_batches, config, objective)?))
    };

    let initial = evaluate_val(model)?;
    let mut best = initial;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    let reg = config.regularizers();
    for epoch in 1..=config.epochs {
        let mut order = natural.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut n = 0;
        for batch in compose_batches(train, &order, config.batch_size) {
            let Some(loss) = batch_loss(&batch, config, objective) else { continue };
            let obj = forward_backward(model, &batch.inputs, loss.as_ref(), reg)?;
            total += obj.loss;
            n += 1;
            opt.step(&mut model.params, &obj.grads)?;
        }
        let train_loss = if n > 0 { total / n as f64 } else { 0.0 };
        let (val_mrr, val_loss) = evaluate_val(model)?;
        log::debug!("{stage} epoch {epoch}: train {train_loss:.5} val_loss {val_loss:?} val_mrr {val_mrr:?}");
        epochs.push(EpochRecord { epoch, train_loss, val_loss, val_mrr });
        if val.is_empty() || improves(val_mrr, val_loss, best) {
            best = (val_mrr, val_loss);
            best_model = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    *model = best_model;
    Ok(TrainReport {
        stage: stage.to_string(),
        epochs,
        best_epoch,
        initial_val_mrr: initial.0,
        stopped_early,
        train_units: train.len(),
        val_units: val.len(),
        final_params_hash: model.hash(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Trains on `train`, early-stopping on `val` (which may be empty).
pub fn train_units(
    stage: &str,
    model: &mut Model<f64>,
    train: &[TrainUnit],
    val: &[TrainUnit],
    config: &TrainConfig,
    loss_mode: LossMode,
) -> Result<TrainReport, TrainError> {
    let objective = match loss_mode {
        LossMode::Bmt => Objective::Triplet,
        LossMode::Quadruplet => Objective::Quadruplet,
    };
    run(stage, model, train, val, config, objective)
}

fn split_and_train(stage: &str, model: &mut Model<f64>, units: &[TrainUnit], config: &TrainConfig, mode: LossMode) -> Result<TrainReport, TrainError> {
    let (train, val) = split_units(units, config.train_ratio, config.seed)?;
    train_units(stage, model, &train, &val, config, mode)
}

/// Passages of one paragraph share a label; the triplet loss pulls them together.
pub fn pretrain_doc(model: &mut Model<f64>, units: &[TrainUnit], config: &TrainConfig) -> Result<TrainReport, TrainError> {
    split_and_train("doc", model, units, config, LossMode::Bmt)
}

/// Code and its review comment share a label; both act as anchors.
pub fn pretrain_cc(model: &mut Model<f64>, units: &[TrainUnit], config: &TrainConfig) -> Result<TrainReport, TrainError> {
    if units.len() < 2 {
        return Err(TrainError::InvalidConfig(format!("need at least 2 code/comment pairs, got {}", units.len())));
    }
    split_and_train("cc", model, units, config, LossMode::Bmt)
}

/// Trains on re-interpreted bug-fix units with `config.loss_mode`.
pub fn prefinetune(model: &mut Model<f64>, units: &[TrainUnit], config: &TrainConfig) -> Result<TrainReport, TrainError> {
    if config.loss_mode == LossMode::Quadruplet && !units.iter().any(|u| !u.quads.is_empty()) {
        return Err(TrainError::NoFacetCoverage);
    }
    split_and_train("prefinetune", model, units, config, config.loss_mode)
}
