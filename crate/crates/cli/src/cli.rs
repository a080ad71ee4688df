//! Argument parsing and the pipeline subcommands.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use p2c::assessor::{calibrate_alpha, evaluate, Embedder, EmbeddingIndex};
use p2c::corpus::io::{read_jsonl, read_paragraphs, write_jsonl, write_paragraphs};
use p2c::corpus::reinterpret::bugfix_policy_id;
use p2c::corpus::{
    build_bugfix_dataset, default_policy_predicate, segment_documentation, synth_corpus, train_bpe, BugFixRecord, CodeComment,
    CodeSnippet, Corpus, Facet, Policy, SynthConfig, Vocabulary,
};
use p2c::encoder::{fixture_batch, fixture_model, grad_check, EncoderShape, GradCheckOptions, GradientBundle, Model};
use p2c::losses::{BmtLoss, EmbeddingLoss, MarginConfig, MiningStrategy, QuadrupletLoss, Reduction};
use p2c::trainer::{
    bugfix_units, cc_units, doc_units, grid_search, margin_grid, prefinetune, pretrain_cc, pretrain_doc, training_texts,
    ExperimentConfig, LossMode, TrainConfig, TrainReport, TrainUnit,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::service::{self, ModelSpec, ServiceConfig, ServiceState};

#[derive(Debug, Parser)]
#[command(name = "p2c", version, about = "Faceted policy/code embeddings: training, search, classification and review service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a BPE vocabulary from paragraph files.
    TrainBpe(TrainBpeArgs),
    /// Generate a synthetic corpus directory.
    Synth(SynthArgs),
    /// Pre-train on documentation passages (shared paragraph = shared label).
    PretrainDoc(PretrainDocArgs),
    /// Pre-train on code/comment pairs.
    PretrainCc(PretrainCcArgs),
    /// Pre-fine-tune on bug-fix records read as faceted policies.
    Finetune(FinetuneArgs),
    /// Margin grid search over pre-fine-tuning runs.
    Gridsearch(GridsearchArgs),
    /// Embed snippets into a search index.
    Index(IndexArgs),
    /// Rank indexed snippets against one policy facet.
    Search(SearchArgs),
    /// Classify one code snippet against one policy.
    Classify(ClassifyArgs),
    /// Accuracy and MRR on a labeled corpus.
    Eval(EvalArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainBpeArgs {
    /// Paragraph files (blank-line separated).
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value_t = 600)]
    pub vocab_size: usize,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub families: usize,
    #[arg(long, default_value_t = 10)]
    pub heldout: usize,
    #[arg(long, default_value_t = 20)]
    pub snippets_per_family: usize,
    #[arg(long, default_value_t = 1000)]
    pub distractors: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FacetModeArg {
    Prefixed,
    Masked,
}

impl From<FacetModeArg> for p2c::encoder::FacetMode {
    fn from(m: FacetModeArg) -> Self {
        match m {
            FacetModeArg::Prefixed => p2c::encoder::FacetMode::Prefixed,
            FacetModeArg::Masked => p2c::encoder::FacetMode::Masked,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossModeArg {
    Quadruplet,
    Bmt,
}

impl From<LossModeArg> for LossMode {
    fn from(m: LossModeArg) -> Self {
        match m {
            LossModeArg::Quadruplet => LossMode::Quadruplet,
            LossModeArg::Bmt => LossMode::Bmt,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MiningArg {
    BatchAll,
    BatchHard,
    BatchSemiHard,
    BatchHardSoftMargin,
}

impl From<MiningArg> for MiningStrategy {
    fn from(m: MiningArg) -> Self {
        match m {
            MiningArg::BatchAll => MiningStrategy::BatchAll,
            MiningArg::BatchHard => MiningStrategy::BatchHard,
            MiningArg::BatchSemiHard => MiningStrategy::BatchSemiHard,
            MiningArg::BatchHardSoftMargin => MiningStrategy::BatchHardSoftMargin,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReductionArg {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FacetArg {
    Compliant,
    Noncompliant,
}

impl From<FacetArg> for Facet {
    fn from(f: FacetArg) -> Self {
        match f {
            FacetArg::Compliant => Facet::Compliant,
            FacetArg::Noncompliant => Facet::Noncompliant,
        }
    }
}

/// Training hyper-parameters. Unset flags fall back to `--config`, then to
/// the tuned synthetic-benchmark defaults.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TrainConfig JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long, value_enum)]
    pub mining: Option<MiningArg>,
    #[arg(long, value_enum)]
    pub reduction: Option<ReductionArg>,
    #[arg(long, value_enum)]
    pub loss_mode: Option<LossModeArg>,
    #[arg(long, value_enum)]
    pub facet_mode: Option<FacetModeArg>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Write the per-epoch training report as JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::from_json(&read_text(path)?)?,
            None => ExperimentConfig::benchmark(self.seed).finetune,
        };
        c.seed = self.seed;
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => { $(if let Some(v) = self.$flag { $field = v.into(); })* };
        }
        set!(
            epochs => c.epochs, lr => c.learning_rate, batch_size => c.batch_size, patience => c.patience,
            momentum => c.momentum, alpha => c.margins.alpha, alpha1 => c.margins.alpha1, alpha2 => c.margins.alpha2,
            mining => c.mining, loss_mode => c.loss_mode, facet_mode => c.facet_mode, dim => c.dim, hidden => c.hidden,
        );
        if let Some(r) = self.reduction {
            c.reduction = match r {
                ReductionArg::Mean => Reduction::Mean,
                ReductionArg::Sum => Reduction::Sum,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct ModelInit {
    #[arg(long)]
    pub vocab: PathBuf,
    /// Continue from this model instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainDocArgs {
    #[command(flatten)]
    pub model: ModelInit,
    /// Documentation paragraphs (blank-line separated).
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub passage_len: usize,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct PretrainCcArgs {
    #[command(flatten)]
    pub model: ModelInit,
    /// JSONL of `{"id","code","comment"}`.
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct BugfixSource {
    /// JSONL of `{"id","comment","code_before","code_after"}`.
    #[arg(long)]
    pub bugfixes: PathBuf,
    /// JSONL of `{"record_id","group"}`; records sharing a group never share
    /// a batch and land on the same side of the validation split.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Keep every record instead of only policy-like comments.
    #[arg(long)]
    pub no_filter: bool,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub model: ModelInit,
    #[command(flatten)]
    pub source: BugfixSource,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct GridsearchArgs {
    #[command(flatten)]
    pub model: ModelInit,
    #[command(flatten)]
    pub source: BugfixSource,
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    pub grid_alpha1: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.4")]
    pub grid_alpha2: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1.0,1.5")]
    pub grid_alpha: Vec<f64>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct Served {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub served: Served,
    /// JSONL of snippets.
    #[arg(long)]
    pub snippets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub served: Served,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub policy: String,
    #[arg(long, value_enum)]
    pub facet: FacetArg,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub served: Served,
    #[arg(long)]
    pub policy: String,
    #[arg(long)]
    pub code: String,
    /// Relevance threshold.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub served: Served,
    #[arg(long)]
    pub policies: PathBuf,
    #[arg(long)]
    pub snippets: PathBuf,
    /// Fixed relevance threshold. Ignored when a calibration corpus is given.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Labeled corpus (disjoint from the evaluated one) used to pick the
    /// relevance threshold.
    #[arg(long, requires = "calibration_snippets")]
    pub calibration_policies: Option<PathBuf>,
    #[arg(long, requires = "calibration_policies")]
    pub calibration_snippets: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// First fixture seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of seeded fixtures per loss and facet mode.
    #[arg(long, default_value_t = 20)]
    pub configs: u64,
    #[arg(long, value_enum)]
    pub facet_mode: Option<FacetModeArg>,
    #[arg(long, value_enum)]
    pub loss_mode: Option<LossModeArg>,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Adds a fixed offset to one analytic gradient entry.
    #[arg(long, hide = true)]
    pub perturb_gradient: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Model files, `[tag=]path`, comma separated or repeated.
    #[arg(long, env = "P2C_MODEL", value_delimiter = ',', required = true)]
    pub model: Vec<String>,
    /// Index files aligned with `--model`.
    #[arg(long, env = "P2C_INDEX", value_delimiter = ',', required = true)]
    pub index: Vec<PathBuf>,
    #[arg(long, env = "P2C_VOCAB")]
    pub vocab: PathBuf,
    /// Snippet JSONL the indexes were built from.
    #[arg(long, env = "P2C_SNIPPETS")]
    pub snippets: PathBuf,
    #[arg(long, env = "P2C_JUDGMENTS")]
    pub judgments: PathBuf,
    #[arg(long, env = "P2C_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "P2C_ALPHA", default_value_t = 1.0)]
    pub alpha: f64,
}

impl ServeArgs {
    pub fn to_config(&self) -> Result<ServiceConfig, CliError> {
        if self.model.len() != self.index.len() {
            return Err(CliError::Usage(format!("{} models but {} indexes", self.model.len(), self.index.len())));
        }
        let models = self
            .model
            .iter()
            .zip(&self.index)
            .map(|(m, index)| {
                let (tag, path) = match m.split_once('=') {
                    Some((t, p)) => (Some(t.to_string()), p),
                    None => (None, m.as_str()),
                };
                ModelSpec { tag, model: PathBuf::from(path), index: index.clone() }
            })
            .collect();
        Ok(ServiceConfig {
            models,
            vocab: self.vocab.clone(),
            snippets: self.snippets.clone(),
            judgments: self.judgments.clone(),
            alpha: self.alpha,
        })
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Ok(Vocabulary::from_json(&read_text(path)?)?)
}

fn load_model(path: &Path) -> Result<Model<f64>, CliError> {
    Model::load(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_embedder(served: &Served) -> Result<Embedder<f64>, CliError> {
    Ok(Embedder::new(load_model(&served.model)?, load_vocab(&served.vocab)?)?)
}

fn load_corpus(policies: &Path, snippets: &Path) -> Result<Corpus, CliError> {
    let p: Vec<Policy> = read_jsonl(policies)?;
    let s: Vec<CodeSnippet> = read_jsonl(snippets)?;
    Ok(Corpus::new(p, s)?)
}

/// The `--init` model, or a fresh one sized by the training config.
fn starting_model(init: &ModelInit, vocab: &Vocabulary, config: &TrainConfig) -> Result<Model<f64>, CliError> {
    match &init.init {
        Some(path) => {
            let model = load_model(path)?;
            if model.vocab_hash != vocab.hash() {
                return Err(CliError::Input(format!("{} was trained with a different vocabulary", path.display())));
            }
            Ok(model)
        }
        None => {
            let shape = EncoderShape::new(vocab.len(), config.dim, config.hidden);
            Ok(Model::init(shape, config.facet_mode, vocab.hash(), config.seed)?)
        }
    }
}

fn finish_training(model: &Model<f64>, report: &TrainReport, init: &ModelInit, train: &TrainArgs) -> Result<(), CliError> {
    model.save(&init.out).map_err(|e| CliError::Input(format!("{}: {e}", init.out.display())))?;
    if let Some(path) = &train.report {
        fs::write(path, serde_json::to_string_pretty(report).expect("report serializes"))?;
    }
    println!(
        "{}",
        serde_json::json!({
            "stage": report.stage,
            "epochs": report.epochs.len(),
            "best_epoch": report.best_epoch,
            "best_val_mrr": report.best_val_mrr(),
            "model_hash": model.hash(),
        })
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupRow {
    record_id: String,
    group: String,
}

fn bugfix_training_units(source: &BugfixSource, vocab: &Vocabulary, seed: u64) -> Result<Vec<TrainUnit>, CliError> {
    let records: Vec<BugFixRecord> = read_jsonl(&source.bugfixes)?;
    let dataset = if source.no_filter {
        build_bugfix_dataset(&records, seed, None::<fn(&str) -> bool>)?
    } else {
        build_bugfix_dataset(&records, seed, Some(default_policy_predicate))?
    };
    log::info!("{} of {} bug-fix records retained", dataset.pairs.len(), records.len());
    let mut units = bugfix_units(&dataset, vocab)?;
    if let Some(path) = &source.groups {
        let rows: Vec<GroupRow> = read_jsonl(path)?;
        let groups: HashMap<String, String> = rows.into_iter().map(|r| (bugfix_policy_id(&r.record_id), r.group)).collect();
        for u in &mut units {
            if let Some(g) = groups.get(&u.group) {
                u.group = g.clone();
            }
        }
    }
    Ok(units)
}

fn train_bpe_cmd(a: &TrainBpeArgs) -> Result<(), CliError> {
    let mut texts = Vec::new();
    for path in &a.input {
        texts.extend(read_paragraphs(path)?);
    }
    let mut vocab = train_bpe(&texts, a.vocab_size)?;
    if let Some(n) = a.max_seq_len {
        vocab = vocab.with_max_seq_len(n);
    }
    fs::write(&a.out, vocab.to_json())?;
    println!("{}", serde_json::json!({ "tokens": vocab.len(), "merges": vocab.merges().len(), "vocab_hash": vocab.hash() }));
    Ok(())
}

fn synth_cmd(a: &SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig::new(a.seed, a.families, a.snippets_per_family, a.distractors).with_heldout(a.heldout);
    let data = synth_corpus(&config)?;
    let dir = &a.out;
    fs::create_dir_all(dir.join("benchmark"))?;
    fs::create_dir_all(dir.join("calibration"))?;
    write_jsonl(dir.join("policies.jsonl"), &data.policies)?;
    write_jsonl(dir.join("snippets.jsonl"), &data.snippets)?;
    let train_ids = data.train_families().map(|f| f.id.as_str()).collect();
    for (sub, corpus) in [("benchmark", data.heldout_benchmark()?), ("calibration", data.benchmark_for(&train_ids)?)] {
        write_jsonl(dir.join(sub).join("policies.jsonl"), corpus.policies())?;
        write_jsonl(dir.join(sub).join("snippets.jsonl"), corpus.snippets())?;
    }
    write_paragraphs(dir.join("docs.txt"), &data.docs)?;
    write_jsonl(dir.join("cc.jsonl"), &data.cc_pairs)?;
    write_jsonl(dir.join("bugfixes.jsonl"), &data.bugfixes)?;
    let groups: Vec<GroupRow> = data
        .bugfixes
        .iter()
        .zip(&data.bugfix_family)
        .map(|(r, f)| GroupRow { record_id: r.id.clone(), group: f.clone().unwrap_or_else(|| format!("noise:{}", r.id)) })
        .collect();
    write_jsonl(dir.join("bugfix_groups.jsonl"), &groups)?;
    write_paragraphs(dir.join("training_texts.txt"), &training_texts(&data))?;
    println!(
        "{}",
        serde_json::json!({
            "policies": data.policies.len(),
            "snippets": data.snippets.len(),
            "bugfixes": data.bugfixes.len(),
            "docs": data.docs.len(),
            "cc_pairs": data.cc_pairs.len(),
        })
    );
    Ok(())
}

fn pretrain_doc_cmd(a: &PretrainDocArgs) -> Result<(), CliError> {
    let config = a.train.resolve()?;
    let vocab = load_vocab(&a.model.vocab)?;
    let mut model = starting_model(&a.model, &vocab, &config)?;
    let passages = segment_documentation(&read_paragraphs(&a.docs)?, a.passage_len, &vocab)?;
    let report = pretrain_doc(&mut model, &doc_units(&passages, &vocab), &config)?;
    finish_training(&model, &report, &a.model, &a.train)
}

fn pretrain_cc_cmd(a: &PretrainCcArgs) -> Result<(), CliError> {
    let config = a.train.resolve()?;
    let vocab = load_vocab(&a.model.vocab)?;
    let mut model = starting_model(&a.model, &vocab, &config)?;
    let pairs: Vec<CodeComment> = read_jsonl(&a.pairs)?;
    let (units, duplicates) = cc_units(&pairs, &vocab);
    if duplicates > 0 {
        log::warn!("{duplicates} pairs repeat an earlier comment");
    }
    let report = pretrain_cc(&mut model, &units, &config)?;
    finish_training(&model, &report, &a.model, &a.train)
}

fn finetune_cmd(a: &FinetuneArgs) -> Result<(), CliError> {
    let config = a.train.resolve()?;
    let vocab = load_vocab(&a.model.vocab)?;
    let mut model = starting_model(&a.model, &vocab, &config)?;
    let units = bugfix_training_units(&a.source, &vocab, config.seed)?;
    let report = prefinetune(&mut model, &units, &config)?;
    finish_training(&model, &report, &a.model, &a.train)
}

fn gridsearch_cmd(a: &GridsearchArgs) -> Result<(), CliError> {
    let base = a.train.resolve()?;
    let vocab = load_vocab(&a.model.vocab)?;
    let start = starting_model(&a.model, &vocab, &base)?;
    let units = bugfix_training_units(&a.source, &vocab, base.seed)?;
    let configs = margin_grid(&base, &a.grid_alpha1, &a.grid_alpha2, &a.grid_alpha);
    let mut models = Vec::new();
    let outcome = grid_search(&configs, |c| {
        let mut m = start.clone();
        let r = prefinetune(&mut m, &units, c)?;
        models.push(m);
        Ok(r)
    })?;
    let best = &models[outcome.best_index];
    best.save(&a.model.out).map_err(|e| CliError::Input(format!("{}: {e}", a.model.out.display())))?;
    if let Some(path) = &a.train.report {
        fs::write(path, serde_json::to_string_pretty(&outcome).expect("grid outcome serializes"))?;
    }
    println!(
        "{}",
        serde_json::json!({
            "best_index": outcome.best_index,
            "best_margins": outcome.best_config.margins,
            "table": outcome.table,
            "model_hash": best.hash(),
        })
    );
    Ok(())
}

fn index_cmd(a: &IndexArgs) -> Result<(), CliError> {
    let embedder = load_embedder(&a.served)?;
    let snippets: Vec<CodeSnippet> = read_jsonl(&a.snippets)?;
    let index = EmbeddingIndex::build(&snippets, &embedder)?;
    index.save(&a.out)?;
    println!("{}", serde_json::json!({ "rows": index.len(), "dim": index.dim(), "model_hash": index.model_hash() }));
    Ok(())
}

fn search_cmd(a: &SearchArgs) -> Result<(), CliError> {
    let embedder = load_embedder(&a.served)?;
    let index = EmbeddingIndex::<f64>::load(&a.index)?;
    for hit in index.search(&embedder, &a.policy, a.facet.into(), a.k)? {
        println!("{}\t{}\t{:.6}", hit.rank, hit.snippet_id, hit.distance);
    }
    Ok(())
}

fn classify_cmd(a: &ClassifyArgs) -> Result<(), CliError> {
    let embedder = load_embedder(&a.served)?;
    let verdict = embedder.classify(&a.policy, &a.code, a.alpha)?;
    println!("{}", serde_json::to_string(&verdict).expect("verdict serializes"));
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<(), CliError> {
    let embedder = load_embedder(&a.served)?;
    let corpus = load_corpus(&a.policies, &a.snippets)?;
    let alpha = match (&a.calibration_policies, &a.calibration_snippets) {
        (Some(p), Some(s)) => calibrate_alpha(&load_corpus(p, s)?, &embedder, a.seed)?,
        _ => a.alpha,
    };
    let report = evaluate(&corpus, &embedder, alpha, a.seed)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

#[derive(Debug, Serialize)]
struct GradcheckLine {
    facet_mode: String,
    loss_mode: String,
    seed: u64,
    max_rel_error: f64,
    compared: usize,
    argmax: Option<String>,
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<(), CliError> {
    let facet_modes: Vec<p2c::encoder::FacetMode> = match a.facet_mode {
        Some(m) => vec![m.into()],
        None => p2c::encoder::FacetMode::ALL.to_vec(),
    };
    let loss_modes: Vec<LossMode> = match a.loss_mode {
        Some(m) => vec![m.into()],
        None => LossMode::ALL.to_vec(),
    };
    let margins = MarginConfig { alpha1: 0.5, alpha2: 1.0, alpha: 1.0 };
    let options = GradCheckOptions { epsilon: a.epsilon, ..GradCheckOptions::default() };
    let bump = |g: &mut GradientBundle<f64>| g.w1[0] += 1e-2;
    let perturb: Option<&dyn Fn(&mut GradientBundle<f64>)> = if a.perturb_gradient { Some(&bump) } else { None };
    let mut worst: f64 = 0.0;
    for &facet_mode in &facet_modes {
        for seed in a.seed..a.seed + a.configs {
            let model = fixture_model(seed, facet_mode);
            let (items, labels, quads) = fixture_batch(seed);
            for &loss_mode in &loss_modes {
                let loss: Box<dyn EmbeddingLoss<f64>> = match loss_mode {
                    LossMode::Quadruplet => Box::new(QuadrupletLoss::new(quads.clone(), items.len(), &margins)),
                    LossMode::Bmt => Box::new(BmtLoss::new(labels.clone(), 1.0, MiningStrategy::ALL[seed as usize % 4])),
                };
                let r = grad_check(&model, &items, loss.as_ref(), &options, perturb)?;
                worst = worst.max(r.max_rel_error);
                let line = GradcheckLine {
                    facet_mode: facet_mode.to_string(),
                    loss_mode: loss_mode.to_string(),
                    seed,
                    max_rel_error: r.max_rel_error,
                    compared: r.compared,
                    argmax: r.argmax.map(|c| format!("{}[{}]", c.tensor, c.index)),
                };
                println!("{}", serde_json::to_string(&line).expect("line serializes"));
            }
        }
    }
    if worst > a.tolerance {
        return Err(CliError::GradientMismatch { max_rel_error: worst, tolerance: a.tolerance });
    }
    Ok(())
}

fn serve_cmd(a: &ServeArgs) -> Result<(), CliError> {
    let config = a.to_config()?;
    let state = ServiceState::load(&config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(state, a.port))?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::TrainBpe(a) => train_bpe_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::PretrainDoc(a) => pretrain_doc_cmd(a),
        Command::PretrainCc(a) => pretrain_cc_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Gridsearch(a) => gridsearch_cmd(a),
        Command::Index(a) => index_cmd(a),
        Command::Search(a) => search_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}
