//! Corpora, low-resource sampling, training pairs and experiment runs.
//!
//! A run samples a fraction of the training corpus per seed, turns the
//! sample into stage-1 and stage-2 training pairs, fine-tunes fresh backends
//! and scores the eval corpus twice: after the first epoch (F1*) and after
//! the last. Per-seed artifacts go under `runs/<config-hash>/<seed>/`; the
//! mean over seeds goes to `runs/<config-hash>/aggregate.json`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::anchor::{AnchorScheme, GenerationOrder};
use crate::backend::{
    register_anchor_tokens, BackendError, SeqBackend, TrainConfig, TrainReport, TrainingPair,
};
use crate::codec::{
    build_stage1_io, build_stage2_input, build_stage2_target, parse_stage2_output,
    predicate_inventory, CodecError, Sentence, Triple,
};
use crate::eval::{f1_percent, score_corpus, EvalError, ReportLabel, ScoreReport, ScoredSentence};
use crate::pipeline::{ExtractionConfig, OrderPolicy, Pipeline, SlotGranularity};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("sample of {fraction} x {total} examples is empty")]
    EmptySample { fraction: f64, total: usize },
    #[error("fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("example {example}: {source}")]
    Codec {
        example: usize,
        #[source]
        source: CodecError,
    },
    #[error("seed {seed}: {source}")]
    Backend {
        seed: u64,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A sentence with its gold triples. Serialised as one JSON line:
/// `{"sentence": ..., "triples": [{"subject", "predicate", "object"}, ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionExample {
    pub sentence: Sentence,
    pub triples: Vec<Triple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl CorpusFormat {
    /// `.tsv` and `.txt` are tab-separated; everything else is JSON lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

pub fn import_corpus(
    path: &Path,
    format: CorpusFormat,
) -> Result<Vec<ExtractionExample>, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_corpus(BufReader::new(file), format).map_err(|e| match e {
        HarnessError::Io { source, .. } => HarnessError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_corpus(
    reader: impl Read,
    format: CorpusFormat,
) -> Result<Vec<ExtractionExample>, HarnessError> {
    let reader = BufReader::new(reader);
    let mut examples: Vec<ExtractionExample> = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(io_err(Path::new("<input>")))?;
        if line.trim().is_empty() {
            continue;
        }
        match format {
            CorpusFormat::Jsonl => {
                let example: ExtractionExample =
                    serde_json::from_str(&line).map_err(|e| HarnessError::Malformed {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                examples.push(example);
            }
            CorpusFormat::Tsv => {
                let cols: Vec<&str> = line.split('\t').collect();
                let [sentence, predicate, subject, object] = cols[..] else {
                    return Err(HarnessError::Malformed {
                        line: line_no,
                        message: format!("expected 4 tab-separated columns, found {}", cols.len()),
                    });
                };
                let malformed = |e: CodecError| HarnessError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                };
                let triple = Triple::new(subject, predicate, object).map_err(malformed)?;
                match examples.last_mut() {
                    Some(last) if last.sentence.as_str() == sentence => last.triples.push(triple),
                    _ => examples.push(ExtractionExample {
                        sentence: Sentence::new(sentence).map_err(malformed)?,
                        triples: vec![triple],
                    }),
                }
            }
        }
    }
    if examples.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    Ok(examples)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Uniform sample without replacement of `round(fraction * len)` items,
/// kept in corpus order. Deterministic for a given seed.
pub fn sample_fraction<T: Clone>(
    items: &[T],
    fraction: f64,
    seed: u64,
) -> Result<Vec<T>, HarnessError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(HarnessError::InvalidFraction(fraction));
    }
    let n = (fraction * items.len() as f64).round() as usize;
    if n == 0 {
        return Err(HarnessError::EmptySample {
            fraction,
            total: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, items.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

/// Which generation orders each training example is rendered under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    /// One stage-2 pair per order, the order applied to every slot.
    #[default]
    AllOrders,
    Fixed {
        order: GenerationOrder,
    },
}

impl Augmentation {
    pub fn orders(&self) -> Vec<GenerationOrder> {
        match self {
            Augmentation::AllOrders => GenerationOrder::ALL.to_vec(),
            Augmentation::Fixed { order } => vec![*order],
        }
    }
}

/// A training pair with its provenance, as persisted in `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub example: usize,
    pub stage: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<GenerationOrder>,
    pub input: String,
    pub target: String,
}

impl PairRecord {
    pub fn to_pair(&self) -> TrainingPair {
        TrainingPair {
            input: self.input.clone(),
            target: self.target.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainingPairs {
    pub stage1: Vec<PairRecord>,
    pub stage2: Vec<PairRecord>,
}

/// Stage-1 pairs (one per example) and stage-2 pairs (one per example and
/// order). Stage-2 inputs carry one slot per gold triple.
pub fn build_training_pairs(
    examples: &[ExtractionExample],
    scheme: &AnchorScheme,
    augmentation: Augmentation,
) -> Result<TrainingPairs, HarnessError> {
    let orders = augmentation.orders();
    let mut pairs = TrainingPairs::default();
    for (k, ex) in examples.iter().enumerate() {
        let codec_err = |source| HarnessError::Codec { example: k, source };
        if ex.triples.is_empty() {
            return Err(codec_err(CodecError::EmptyPredicates));
        }
        let (input, target) = build_stage1_io(&ex.sentence, &predicate_inventory(&ex.triples));
        pairs.stage1.push(PairRecord {
            example: k,
            stage: 1,
            order: None,
            input,
            target,
        });

        let slot_predicates: Vec<&str> = ex.triples.iter().map(Triple::predicate).collect();
        for &order in &orders {
            let instance = build_stage2_input(&ex.sentence, &slot_predicates, scheme, &[order])
                .map_err(codec_err)?;
            let target = build_stage2_target(&ex.triples, &instance).map_err(codec_err)?;
            debug_assert_eq!(parse_stage2_output(&target, &instance).triples, ex.triples);
            pairs.stage2.push(PairRecord {
                example: k,
                stage: 2,
                order: Some(order),
                input: instance.input_text,
                target,
            });
        }
    }
    Ok(pairs)
}

/// Everything that defines one experiment except the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Series name used in reports and plots.
    pub label: String,
    pub fraction: f64,
    pub seeds: Vec<u64>,
    pub train_config: TrainConfig,
    pub scheme: AnchorScheme,
    pub order_policy: OrderPolicy,
    pub augmentation: Augmentation,
    pub granularity: SlotGranularity,
    /// Full-data reference F1 (in `[0, 1]`) for F1%.
    pub reference_f1: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            label: "OK-IE".into(),
            fraction: 0.009,
            seeds: vec![0, 1, 2],
            train_config: TrainConfig::default(),
            scheme: AnchorScheme::anchored(),
            order_policy: OrderPolicy::Fixed {
                order: GenerationOrder::Spo,
            },
            augmentation: Augmentation::AllOrders,
            granularity: SlotGranularity::AllInOne,
            reference_f1: Some(0.54),
        }
    }
}

impl ExperimentConfig {
    /// Stable identifier of the configuration, seeds excluded.
    pub fn config_hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.seeds.clear();
        let bytes = serde_json::to_vec(&keyed).expect("config serialises");
        hex::encode(&Sha256::digest(&bytes)[..6])
    }

    pub fn extraction_config(&self) -> ExtractionConfig {
        ExtractionConfig {
            scheme: self.scheme.clone(),
            policy: self.order_policy,
            granularity: self.granularity,
            ..ExtractionConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(HarnessError::InvalidFraction(self.fraction));
        }
        self.scheme
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train_config
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Fresh backends for one seed.
pub enum BackendPair {
    /// One model serves both stages and is trained on both pair sets.
    Shared(Box<dyn SeqBackend>),
    Separate {
        stage1: Box<dyn SeqBackend>,
        stage2: Box<dyn SeqBackend>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub sample_size: usize,
    pub f1_star: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub config_hash: String,
    pub fraction: f64,
    pub seeds: Vec<u64>,
    pub f1_star: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_percent: Option<f64>,
    pub per_seed: Vec<SeedSummary>,
}

/// Arithmetic mean, accumulated as offsets from the minimum in sorted order:
/// independent of the order of `values` and exact when all values are equal.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let base = v[0];
    base + v.iter().map(|x| x - base).sum::<f64>() / v.len() as f64
}

pub fn aggregate(
    config: &ExperimentConfig,
    per_seed: Vec<SeedSummary>,
) -> Result<AggregateReport, HarnessError> {
    let f1 = mean(per_seed.iter().map(|s| s.f1));
    let f1_percent = config.reference_f1.map(|r| f1_percent(f1, r)).transpose()?;
    Ok(AggregateReport {
        label: config.label.clone(),
        config_hash: config.config_hash(),
        fraction: config.fraction,
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        f1_star: mean(per_seed.iter().map(|s| s.f1_star)),
        f1,
        precision: mean(per_seed.iter().map(|s| s.precision)),
        recall: mean(per_seed.iter().map(|s| s.recall)),
        f1_percent,
        per_seed,
    })
}

/// Runs the extraction pipeline over `eval` and scores it.
pub fn evaluate(
    stage1: &dyn SeqBackend,
    stage2: &dyn SeqBackend,
    config: ExtractionConfig,
    eval: &[ExtractionExample],
    label: ReportLabel,
    reference_f1: Option<f64>,
) -> Result<ScoreReport, HarnessError> {
    let pipeline = Pipeline::new(stage1, stage2, config);
    let records = pipeline.extract_corpus(eval.iter().map(|e| e.sentence.clone()));
    let scored = records
        .zip(eval)
        .enumerate()
        .map(|(k, (rec, ex))| ScoredSentence {
            id: k.to_string(),
            preds: rec.triples,
            golds: ex.triples.clone(),
        });
    let report = score_corpus(scored)?.with_label(label);
    Ok(match reference_f1 {
        Some(r) => report.with_f1_percent(r)?,
        None => report,
    })
}

/// Where a run's artifacts live.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(runs_dir: &Path, config: &ExperimentConfig) -> Self {
        Self {
            root: runs_dir.join(config.config_hash()),
        }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(seed.to_string())
    }

    pub fn aggregate(&self) -> PathBuf {
        self.root.join("aggregate.json")
    }
}

fn run_seed(
    config: &ExperimentConfig,
    seed: u64,
    backends: BackendPair,
    train: &[ExtractionExample],
    eval: &[ExtractionExample],
    dir: &Path,
) -> Result<SeedSummary, HarnessError> {
    let epoch1_path = dir.join("report_epoch1.json");
    let final_path = dir.join("report_final.json");
    let sample_path = dir.join("sample.jsonl");

    let sampled = sample_fraction(train, config.fraction, seed)?;
    if epoch1_path.exists() && final_path.exists() {
        let epoch1: ScoreReport = read_json(&epoch1_path)?;
        let last: ScoreReport = read_json(&final_path)?;
        return Ok(summary(seed, sampled.len(), &epoch1, &last));
    }

    write_jsonl(&sample_path, &sampled)?;
    let pairs = build_training_pairs(&sampled, &config.scheme, config.augmentation)?;
    write_jsonl(
        &dir.join("pairs.jsonl"),
        pairs.stage1.iter().chain(&pairs.stage2),
    )?;

    let stage1_pairs: Vec<TrainingPair> = pairs.stage1.iter().map(PairRecord::to_pair).collect();
    let stage2_pairs: Vec<TrainingPair> = pairs.stage2.iter().map(PairRecord::to_pair).collect();
    let mut train_config = config.train_config.clone();
    train_config.seed = seed;
    let backend_err = |source| HarnessError::Backend { seed, source };

    let mut epoch1: Option<ScoreReport> = None;
    let mut eval_failure: Option<HarnessError> = None;
    let extraction = config.extraction_config();
    let mut on_epoch = |stage1: &dyn SeqBackend, end: &crate::backend::EpochEnd<'_>| {
        if end.epoch != 1 {
            return Ok(());
        }
        match evaluate(
            stage1,
            end.model,
            extraction.clone(),
            eval,
            ReportLabel::AfterOneEpoch,
            config.reference_f1,
        )
        .and_then(|r| write_json(&epoch1_path, &r).map(|_| r))
        {
            Ok(r) => {
                epoch1 = Some(r);
                Ok(())
            }
            Err(e) => {
                let msg = e.to_string();
                eval_failure = Some(e);
                Err(BackendError::Callback(msg))
            }
        }
    };

    let last = match backends {
        BackendPair::Shared(mut model) => {
            if config.scheme.is_anchored() {
                register_anchor_tokens(model.as_mut(), &config.scheme).map_err(backend_err)?;
            }
            let all: Vec<TrainingPair> = stage1_pairs.into_iter().chain(stage2_pairs).collect();
            let report: Result<TrainReport, BackendError> =
                model.fine_tune(&all, &train_config, &mut |end| on_epoch(end.model, end));
            report_or_failure(report, &mut eval_failure, seed)?;
            evaluate(
                model.as_ref(),
                model.as_ref(),
                extraction.clone(),
                eval,
                ReportLabel::Final,
                config.reference_f1,
            )?
        }
        BackendPair::Separate {
            mut stage1,
            mut stage2,
        } => {
            stage1
                .fine_tune(&stage1_pairs, &train_config, &mut |_| Ok(()))
                .map_err(backend_err)?;
            if config.scheme.is_anchored() {
                register_anchor_tokens(stage2.as_mut(), &config.scheme).map_err(backend_err)?;
            }
            let stage1_ref: &dyn SeqBackend = stage1.as_ref();
            let report = stage2.fine_tune(&stage2_pairs, &train_config, &mut |end| {
                on_epoch(stage1_ref, end)
            });
            report_or_failure(report, &mut eval_failure, seed)?;
            evaluate(
                stage1.as_ref(),
                stage2.as_ref(),
                extraction.clone(),
                eval,
                ReportLabel::Final,
                config.reference_f1,
            )?
        }
    };
    write_json(&final_path, &last)?;
    let epoch1 = epoch1.ok_or_else(|| HarnessError::Backend {
        seed,
        source: BackendError::Callback("backend never reported epoch 1".into()),
    })?;
    Ok(summary(seed, sampled.len(), &epoch1, &last))
}

fn report_or_failure(
    report: Result<TrainReport, BackendError>,
    eval_failure: &mut Option<HarnessError>,
    seed: u64,
) -> Result<TrainReport, HarnessError> {
    report.map_err(|source| {
        eval_failure
            .take()
            .unwrap_or(HarnessError::Backend { seed, source })
    })
}

fn summary(seed: u64, sample_size: usize, epoch1: &ScoreReport, last: &ScoreReport) -> SeedSummary {
    SeedSummary {
        seed,
        sample_size,
        f1_star: epoch1.f1,
        f1: last.f1,
        precision: last.precision,
        recall: last.recall,
    }
}

/// Runs every seed of `config` and writes the aggregate. Reports of seeds
/// already on disk are reused. A failing seed aborts the experiment; files
/// written so far stay in place.
pub fn run_experiment(
    config: &ExperimentConfig,
    factory: &mut dyn FnMut(u64) -> Result<BackendPair, BackendError>,
    train: &[ExtractionExample],
    eval: &[ExtractionExample],
    runs_dir: &Path,
) -> Result<AggregateReport, HarnessError> {
    config.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    let layout = RunLayout::new(runs_dir, config);
    write_json(&layout.root.join("config.json"), config)?;

    let mut per_seed = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let backends = factory(seed).map_err(|source| HarnessError::Backend { seed, source })?;
        per_seed.push(run_seed(
            config,
            seed,
            backends,
            train,
            eval,
            &layout.seed_dir(seed),
        )?);
    }
    let report = aggregate(config, per_seed)?;
    write_json(&layout.aggregate(), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub approach: String,
    pub anchored: bool,
    pub augmentation: Augmentation,
    pub f1_star: f64,
    pub f1: f64,
    pub config_hash: String,
}

/// F1* and F1 for each combination of anchoring and augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Plain-text table with metrics in percent.
    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.approach.len())
            .max()
            .unwrap_or(8)
            .max(8);
        let mut out = format!("{:<width$}  {:>6}  {:>6}\n", "Approach", "F1*", "F1");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>6.1}  {:>6.1}\n",
                row.approach,
                100.0 * row.f1_star,
                100.0 * row.f1
            ));
        }
        out
    }
}

/// Runs the 2 x 2 grid {plain, anchored} x {fixed order, all orders} on top
/// of `base`.
pub fn run_ablation(
    base: &ExperimentConfig,
    factory: &mut dyn FnMut(u64) -> Result<BackendPair, BackendError>,
    train: &[ExtractionExample],
    eval: &[ExtractionExample],
    runs_dir: &Path,
) -> Result<AblationTable, HarnessError> {
    let fixed_order = match base.order_policy {
        OrderPolicy::Fixed { order } => order,
        OrderPolicy::AllOrdersVote { .. } => GenerationOrder::Spo,
    };
    let mut rows = Vec::new();
    for anchored in [false, true] {
        for augmentation in [
            Augmentation::Fixed { order: fixed_order },
            Augmentation::AllOrders,
        ] {
            let mut config = base.clone();
            config.scheme = if anchored {
                if base.scheme.is_anchored() {
                    base.scheme.clone()
                } else {
                    AnchorScheme::anchored()
                }
            } else {
                AnchorScheme::plain()
            };
            config.augmentation = augmentation;
            let approach = format!(
                "{} + {}",
                if anchored { "anchored" } else { "plain" },
                match augmentation {
                    Augmentation::AllOrders => "all orders".to_string(),
                    Augmentation::Fixed { order } => format!("fixed {order}"),
                }
            );
            config.label = format!("{} [{approach}]", base.label);
            let report = run_experiment(&config, factory, train, eval, runs_dir)?;
            rows.push(AblationRow {
                approach,
                anchored,
                augmentation,
                f1_star: report.f1_star,
                f1: report.f1,
                config_hash: report.config_hash,
            });
        }
    }
    Ok(AblationTable { rows })
}
