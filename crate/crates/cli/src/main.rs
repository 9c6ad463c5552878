//! `okie` command-line interface.
//!
//! Exit codes: 0 on success, 2 for bad input or inconsistent flags, 3 when a
//! backend or the environment is unavailable.

mod plot;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use okie::anchor::{AnchorScheme, GenerationOrder};
use okie::backend::{BackendError, BackendKind, MockOracleBackend, SeqBackend};
use okie::codec::{build_stage2_input, build_stage2_target, parse_stage2_output, Sentence};
use okie::eval::{score_corpus, ScoredSentence};
use okie::harness::{
    import_corpus, run_ablation, run_experiment, sample_fraction, write_jsonl, BackendPair,
    CorpusFormat, ExperimentConfig, ExtractionExample, HarnessError,
};
use okie::pipeline::{ExtractionConfig, OrderPolicy, Pipeline, SlotGranularity};

#[derive(Debug)]
struct CliError {
    code: u8,
    error: anyhow::Error,
}

impl CliError {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }

    fn env(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 3,
            error: error.into(),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Backend { .. } => CliError::env(e),
            other => CliError::input(other),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::env(e)
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "okie",
    version,
    about = "Open information extraction via span-corruption infilling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode gold examples as stage-2 (input, target) pairs.
    Transform(TransformArgs),
    /// Extract triples from raw sentences.
    Extract(ExtractArgs),
    /// Score predictions against gold triples.
    Score(ScoreArgs),
    /// Draw a seeded low-resource sample from a corpus.
    Sample(SampleArgs),
    /// Run a training experiment described by a config file.
    Train(TrainArgs),
    /// Plot F1 against training-data fraction from aggregate reports.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    input: PathBuf,
    /// A single order (e.g. SPO) or a comma-separated order per slot.
    #[arg(long, default_value = "SPO")]
    order: String,
    #[arg(long, value_enum, default_value = "on")]
    anchors: Switch,
    #[arg(long)]
    out: PathBuf,
    /// Parse every target back and check it reproduces the input triples.
    #[arg(long, hide = true)]
    roundtrip: bool,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    backend: String,
    /// Backend for predicate extraction; defaults to --backend.
    #[arg(long)]
    stage1_backend: Option<String>,
    /// One sentence per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "SPO", conflicts_with = "vote")]
    order: GenerationOrder,
    /// Generate under all six orders and keep the majority.
    #[arg(long)]
    vote: bool,
    #[arg(long, requires = "vote")]
    threshold: Option<f64>,
    /// One stage-2 input per predicate instead of one per sentence.
    #[arg(long)]
    per_predicate: bool,
    #[arg(long, value_enum, default_value = "on")]
    anchors: Switch,
    /// Gold corpus answering for the mock backend.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Reference full-data F1 for F1%. Values above 1 are read as percentages.
    #[arg(long)]
    f1_percent_denominator: Option<f64>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON or TOML file with the experiment fields plus `train`, `eval`,
    /// `backend`, `runs_dir` and `ablation`.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Glob matching aggregate report files.
    #[arg(long)]
    reports: String,
    /// `.svg` for a vector chart; anything else gets a text table.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Transform(a) => transform(a),
        Command::Extract(a) => extract(a),
        Command::Score(a) => score(a),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train(a),
        Command::Plot(a) => plot::run(&a.reports, &a.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}

fn scheme_for(switch: Switch) -> AnchorScheme {
    match switch {
        Switch::On => AnchorScheme::anchored(),
        Switch::Off => AnchorScheme::plain(),
    }
}

fn load_corpus(path: &Path) -> Result<Vec<ExtractionExample>, CliError> {
    import_corpus(path, CorpusFormat::from_path(path))
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::input)
}

fn parse_orders(text: &str) -> Result<Vec<GenerationOrder>, CliError> {
    text.split(',')
        .map(|o| o.parse::<GenerationOrder>().map_err(CliError::input))
        .collect()
}

#[derive(Serialize)]
struct TransformRecord<'a> {
    input: &'a str,
    target: &'a str,
}

fn transform(args: TransformArgs) -> CliResult {
    let orders = parse_orders(&args.order)?;
    let scheme = scheme_for(args.anchors);
    let examples = load_corpus(&args.input)?;

    let mut records = Vec::with_capacity(examples.len());
    for (k, ex) in examples.iter().enumerate() {
        let line = k + 1;
        let predicates: Vec<&str> = ex.triples.iter().map(|t| t.predicate()).collect();
        let instance = build_stage2_input(&ex.sentence, &predicates, &scheme, &orders)
            .map_err(|e| CliError::input(anyhow!("example {line}: {e}")))?;
        let target = build_stage2_target(&ex.triples, &instance)
            .map_err(|e| CliError::input(anyhow!("example {line}: {e}")))?;
        if args.roundtrip {
            let decoded = parse_stage2_output(&target, &instance);
            if decoded.triples != ex.triples || !decoded.warnings.is_empty() {
                return Err(CliError::input(anyhow!(
                    "example {line}: round-trip mismatch"
                )));
            }
        }
        records.push((instance.input_text, target));
    }
    write_jsonl(
        &args.out,
        records
            .iter()
            .map(|(input, target)| TransformRecord { input, target }),
    )?;
    Ok(())
}

fn open_backend(
    name: &str,
    gold: &Option<Vec<ExtractionExample>>,
) -> Result<Box<dyn SeqBackend>, CliError> {
    match BackendKind::parse(name)? {
        BackendKind::Mock => {
            let gold = gold
                .as_ref()
                .ok_or_else(|| CliError::input(anyhow!("the mock backend needs --gold")))?;
            Ok(Box::new(MockOracleBackend::new(
                gold.iter().map(|e| (e.sentence.clone(), e.triples.clone())),
            )))
        }
        kind => Ok(Box::new(kind.spawn_worker()?)),
    }
}

fn read_sentences(path: &Path) -> Result<Vec<Sentence>, CliError> {
    let file = fs::File::open(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::input)?;
    let mut sentences = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CliError::input)?;
        if line.trim().is_empty() {
            continue;
        }
        let sentence =
            Sentence::new(line).map_err(|e| CliError::input(anyhow!("line {}: {e}", k + 1)))?;
        sentences.push(sentence);
    }
    Ok(sentences)
}

#[derive(Serialize)]
struct DiagnosticsRecord<'a> {
    sentence: &'a Sentence,
    #[serde(flatten)]
    diagnostics: &'a okie::pipeline::Diagnostics,
}

fn extract(args: ExtractArgs) -> CliResult {
    let gold = match &args.gold {
        Some(p) => Some(load_corpus(p)?),
        None => None,
    };
    // Backend names are checked before reading any input.
    let stage2 = open_backend(&args.backend, &gold)?;
    let stage1 = match &args.stage1_backend {
        Some(name) if name != &args.backend => Some(open_backend(name, &gold)?),
        _ => None,
    };
    let sentences = read_sentences(&args.input)?;

    let policy = if args.vote {
        let threshold = args.threshold.unwrap_or(0.5);
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(CliError::input(anyhow!("--threshold must lie in (0, 1]")));
        }
        OrderPolicy::AllOrdersVote { threshold }
    } else {
        OrderPolicy::Fixed { order: args.order }
    };
    let config = ExtractionConfig {
        scheme: scheme_for(args.anchors),
        policy,
        granularity: if args.per_predicate {
            SlotGranularity::PerPredicate
        } else {
            SlotGranularity::AllInOne
        },
        batch_size: args.batch_size.max(1),
    };
    let stage1_ref: &dyn SeqBackend = stage1.as_deref().unwrap_or(stage2.as_ref());
    let pipeline = Pipeline::new(stage1_ref, stage2.as_ref(), config);
    let records: Vec<_> = pipeline.extract_corpus(sentences).collect();

    write_jsonl(
        &args.out,
        records.iter().map(|r| ExtractionExample {
            sentence: r.sentence.clone(),
            triples: r.triples.clone(),
        }),
    )?;
    let sidecar = diagnostics_path(&args.out);
    write_jsonl(
        &sidecar,
        records.iter().map(|r| DiagnosticsRecord {
            sentence: &r.sentence,
            diagnostics: &r.diagnostics,
        }),
    )?;
    let failed = records
        .iter()
        .filter(|r| r.diagnostics.error.is_some())
        .count();
    let warned = records
        .iter()
        .filter(|r| !r.diagnostics.warnings.is_empty())
        .count();
    println!(
        "{} sentences, {} triples, {} with decode warnings, {} failed",
        records.len(),
        records.iter().map(|r| r.triples.len()).sum::<usize>(),
        warned,
        failed
    );
    Ok(())
}

fn diagnostics_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".diagnostics.jsonl");
    out.with_file_name(name)
}

fn score(args: ScoreArgs) -> CliResult {
    let gold = load_corpus(&args.gold)?;
    let pred =
        load_corpus(&args.pred).or_else(|e| match e.error.downcast_ref::<HarnessError>() {
            Some(HarnessError::EmptyCorpus) => Ok(Vec::new()),
            _ => Err(e),
        })?;
    let mut by_sentence: HashMap<&str, Vec<okie::Triple>> = HashMap::new();
    for p in &pred {
        by_sentence
            .entry(p.sentence.as_str())
            .or_default()
            .extend(p.triples.iter().cloned());
    }
    let scored = gold.iter().enumerate().map(|(k, g)| ScoredSentence {
        id: k.to_string(),
        preds: by_sentence
            .get(g.sentence.as_str())
            .cloned()
            .unwrap_or_default(),
        golds: g.triples.clone(),
    });
    let mut report = score_corpus(scored).map_err(CliError::input)?;
    if let Some(denominator) = args.f1_percent_denominator {
        let denominator = if denominator > 1.0 {
            denominator / 100.0
        } else {
            denominator
        };
        report = report
            .with_f1_percent(denominator)
            .map_err(CliError::input)?;
    }
    if let Some(parent) = args.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::input)?;
    }
    let text = serde_json::to_string_pretty(&report).map_err(CliError::input)?;
    fs::write(&args.report, text + "\n")
        .with_context(|| format!("writing {}", args.report.display()))
        .map_err(CliError::input)?;
    println!("{}", report.summary());
    Ok(())
}

fn sample(args: SampleArgs) -> CliResult {
    let examples = load_corpus(&args.input)?;
    let picked = sample_fraction(&examples, args.fraction, args.seed)?;
    write_jsonl(&args.out, &picked)?;
    println!("sampled {} of {} examples", picked.len(), examples.len());
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TrainJob {
    #[serde(flatten)]
    experiment: ExperimentConfig,
    train: PathBuf,
    eval: PathBuf,
    #[serde(default = "default_backend")]
    backend: String,
    #[serde(default = "default_runs_dir")]
    runs_dir: PathBuf,
    /// Run the 2 x 2 anchors/augmentation grid instead of one experiment.
    #[serde(default)]
    ablation: bool,
}

fn default_backend() -> String {
    "mock".into()
}

fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn read_train_job(path: &Path) -> Result<TrainJob, CliError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::input)?;
    let job: TrainJob = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(CliError::input)?,
        _ => serde_json::from_str(&text).map_err(CliError::input)?,
    };
    // Relative corpus paths are resolved against the config file.
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(TrainJob {
        train: base.join(&job.train),
        eval: base.join(&job.eval),
        runs_dir: base.join(&job.runs_dir),
        ..job
    })
}

fn train(args: TrainArgs) -> CliResult {
    let job = read_train_job(&args.config)?;
    let kind = BackendKind::parse(&job.backend)?;
    let train = load_corpus(&job.train)?;
    let eval = load_corpus(&job.eval)?;

    let oracle: Vec<ExtractionExample> = train.iter().chain(&eval).cloned().collect();
    let mut factory = |_seed: u64| -> Result<BackendPair, BackendError> {
        match &kind {
            BackendKind::Mock => Ok(BackendPair::Shared(Box::new(MockOracleBackend::new(
                oracle
                    .iter()
                    .map(|e| (e.sentence.clone(), e.triples.clone())),
            )))),
            worker => Ok(BackendPair::Separate {
                stage1: Box::new(worker.spawn_worker()?),
                stage2: Box::new(worker.spawn_worker()?),
            }),
        }
    };

    let mut stdout = std::io::stdout().lock();
    if job.ablation {
        let table = run_ablation(&job.experiment, &mut factory, &train, &eval, &job.runs_dir)?;
        fs::create_dir_all(&job.runs_dir).map_err(CliError::input)?;
        let json = serde_json::to_string_pretty(&table).map_err(CliError::input)?;
        fs::write(job.runs_dir.join("ablation.json"), json + "\n").map_err(CliError::input)?;
        fs::write(job.runs_dir.join("ablation.txt"), table.render()).map_err(CliError::input)?;
        write!(stdout, "{}", table.render()).map_err(CliError::input)?;
    } else {
        let report = run_experiment(&job.experiment, &mut factory, &train, &eval, &job.runs_dir)?;
        writeln!(
            stdout,
            "{} [{}] fraction {}: F1* {:.1}  F1 {:.1}{}",
            report.label,
            report.config_hash,
            report.fraction,
            100.0 * report.f1_star,
            100.0 * report.f1,
            report
                .f1_percent
                .map(|p| format!("  F1% {p:.1}"))
                .unwrap_or_default()
        )
        .map_err(CliError::input)?;
    }
    Ok(())
}
