//! End-to-end experiments on the synthetic corpus with ablation arms.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::data::{bugfix_units, cc_units, doc_units, TrainUnit};
use super::pipeline::{Pipeline, Stage};
use super::train::TrainReport;
use super::{TrainConfig, TrainError};
use crate::assessor::{calibrate_alpha, evaluate, Embedder, EvalReport};
use crate::corpus::reinterpret::bugfix_policy_id;
use crate::corpus::{
    build_bugfix_dataset, default_policy_predicate, segment_documentation, train_bpe, SynthConfig, SyntheticData, Vocabulary,
};
use crate::encoder::{EncoderShape, Model};
use crate::losses::MarginConfig;

/// Which auxiliary training the model receives before evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Unfiltered pre-fine-tuning only.
    None,
    /// Doc and CC pre-training, then unfiltered pre-fine-tuning.
    DocCc,
    /// Doc and CC pre-training, then pre-fine-tuning on policy-like records.
    DocCcFilter,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::None, Ablation::DocCc, Ablation::DocCcFilter];
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::DocCc => "doc+cc",
            Ablation::DocCcFilter => "doc+cc+filter",
        })
    }
}

/// Everything needed to go from a synthetic corpus to a held-out report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub vocab_size: usize,
    /// Tokens per documentation passage.
    pub passage_len: usize,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Seed for distractor sampling during calibration and evaluation.
    pub eval_seed: u64,
}

impl ExperimentConfig {
    /// 20 training and 10 held-out families, 20 snippets per family and
    /// 1,000 distractors. Both stages use BMT with margin 1.0, plain SGD at
    /// 0.01 and early stopping after 40 stale epochs.
    pub fn benchmark(seed: u64) -> Self {
        let synth = SynthConfig::new(seed, 30, 20, 1000).with_heldout(10);
        let stage = TrainConfig {
            epochs: 300,
            learning_rate: 0.01,
            patience: 40,
            margins: MarginConfig { alpha: 1.0, ..MarginConfig::default() },
            seed,
            ..TrainConfig::default()
        };
        let (pretrain, finetune) = (stage.clone(), stage);
        Self { synth, vocab_size: 600, passage_len: 16, pretrain, finetune, eval_seed: seed }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub ablation: Ablation,
    pub model: Model<f64>,
    pub vocab: Vocabulary,
    pub alpha: f64,
    pub report: EvalReport,
    pub train_reports: Vec<TrainReport>,
    pub wall_time_secs: f64,
}

/// Texts the tokenizer may see: every training source, but no benchmark
/// snippet or policy.
pub fn training_texts(data: &SyntheticData) -> Vec<String> {
    let mut out: Vec<String> = data.docs.clone();
    for p in &data.cc_pairs {
        out.push(p.code.clone());
        out.push(p.comment.clone());
    }
    for r in &data.bugfixes {
        out.push(r.comment.clone());
        out.push(r.code_before.clone());
        out.push(r.code_after.clone());
    }
    out
}

/// Bug-fix units regrouped by family so that two fixes of the same family
/// never share a batch or straddle the train/validation split.
pub fn family_bugfix_units(data: &SyntheticData, vocab: &Vocabulary, filtered: bool, seed: u64) -> Result<Vec<TrainUnit>, TrainError> {
    let dataset = if filtered {
        build_bugfix_dataset(&data.bugfixes, seed, Some(default_policy_predicate))?
    } else {
        build_bugfix_dataset(&data.bugfixes, seed, None::<fn(&str) -> bool>)?
    };
    let family: HashMap<String, String> = data
        .bugfixes
        .iter()
        .zip(&data.bugfix_family)
        .map(|(r, f)| (bugfix_policy_id(&r.id), f.clone().unwrap_or_else(|| format!("noise:{}", r.id))))
        .collect();
    let mut units = bugfix_units(&dataset, vocab)?;
    for u in &mut units {
        if let Some(f) = family.get(&u.group) {
            u.group = f.clone();
        }
    }
    Ok(units)
}

/// Runs one ablation arm end to end: tokenizer, training stages, threshold
/// calibration on training families, evaluation on held-out families.
pub fn run_experiment(data: &SyntheticData, config: &ExperimentConfig, ablation: Ablation) -> Result<ExperimentOutcome, TrainError> {
    let start = Instant::now();
    let vocab = train_bpe(&training_texts(data), config.vocab_size)?;
    let ft = &config.finetune;
    let shape = EncoderShape::new(vocab.len(), ft.dim, ft.hidden);
    let model = Model::init(shape, ft.facet_mode, vocab.hash(), ft.seed)?;
    let mut pipeline = Pipeline::new(model);

    if ablation != Ablation::None {
        let passages = segment_documentation(&data.docs, config.passage_len, &vocab)?;
        let mut units = doc_units(&passages, &vocab);
        units.extend(cc_units(&data.cc_pairs, &vocab).0);
        pipeline.run(Stage::DocCcJoint, &units, &config.pretrain)?;
    }
    let units = family_bugfix_units(data, &vocab, ablation == Ablation::DocCcFilter, ft.seed)?;
    pipeline.run(Stage::Prefinetune, &units, ft)?;

    let train_reports = pipeline.reports().to_vec();
    let embedder = Embedder::new(pipeline.into_model(), vocab)?;
    let train_ids: HashSet<&str> = data.train_families().map(|f| f.id.as_str()).collect();
    let alpha = calibrate_alpha(&data.benchmark_for(&train_ids)?, &embedder, config.eval_seed)?;
    let report = evaluate(&data.heldout_benchmark()?, &embedder, alpha, config.eval_seed)?;
    Ok(ExperimentOutcome {
        ablation,
        model: embedder.model().clone(),
        vocab: embedder.vocab().clone(),
        alpha,
        report,
        train_reports,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
