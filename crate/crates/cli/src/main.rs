//! `qacoop`: toy data, preparation, clustering, training, evaluation and the
//! live session server.

mod manifest;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qacoop_core::candidates::{build_inference_candidates, CandidateSet, WordVectorTable, DEFAULT_WORD_DIM};
use qacoop_core::checkpoint::{self, CheckpointMeta};
use qacoop_core::corpus::{
    by_split, ingest_dataset, load_feature_store, serialize_dataset, synthesize_toy_corpus, DialogCase, FeatureShape, FeatureStore, QaPair, Split,
    Vocabulary,
};
use qacoop_core::dialog::{transcripts_to_jsonl, AnswerSource};
use qacoop_core::eval::{build_bank, evaluate, EvalConfig};
use qacoop_core::model::{Ablations, AttentionKind, DialogMode, Model, ModelConfig, QbotFrames};
use qacoop_core::selection::CandidateBank;
use qacoop_core::training::{prepare_cases, train_with_observer, TrainConfig};
use qacoop_service::{Deployment, Service, ServiceConfig};
use serde::Serialize;

use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "qacoop", version, about = "Two cooperative agents that talk about a video, then describe it")]
struct Cli {
    /// Directory holding dataset.json and features/.
    #[arg(long, global = true, env = "QACOOP_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus with features into the data directory.
    Toy(ToyArgs),
    /// Check the dataset and features, and write the vocabulary.
    Prepare(PrepareArgs),
    /// Cluster the evaluation candidates.
    Cluster(ClusterArgs),
    Train(TrainArgs),
    Eval(EvalArgs),
    /// Serve live sessions where a person answers Q-BOT's questions.
    ChatServe(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
struct ToyArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Vocabulary budget, reserved tokens included.
    #[arg(long, default_value_t = 64)]
    vocab: usize,
}

#[derive(Debug, Args, Serialize)]
struct PrepareArgs {
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(Debug, Args, Serialize)]
struct ClusterArgs {
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// GloVe-style text file; without one, random word vectors are used.
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    #[arg(long, default_value = "disc", value_parser = parse_mode)]
    mode: DialogMode,
    #[arg(long, default_value = "mm", value_parser = parse_attention)]
    attention: AttentionKind,
    #[arg(long)]
    no_av_lstm: bool,
    #[arg(long)]
    no_audio: bool,
    #[arg(long)]
    no_caption: bool,
    #[arg(long)]
    no_history_abot: bool,
    #[arg(long)]
    no_dynamic_update: bool,
    #[arg(long, default_value = "segmented2", value_parser = parse_qbot_frames)]
    qbot_frames: QbotFrames,
}

impl ModelArgs {
    fn ablations(&self) -> Ablations {
        Ablations {
            attention: self.attention,
            av_lstm: !self.no_av_lstm,
            audio: !self.no_audio,
            caption: !self.no_caption,
            history_abot: !self.no_history_abot,
            qbot_frames: self.qbot_frames,
            dynamic_update: !self.no_dynamic_update,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Disables the internal selection loss.
    #[arg(long)]
    no_reasoning: bool,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long = "lambda", default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 2)]
    patience: usize,
    #[arg(long, default_value_t = 3)]
    ce_only_tail: usize,
    #[arg(long, default_value_t = 100)]
    n_candidates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory (default: <data-dir>/runs/train-<mode>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    /// Default: <data-dir>/runs/train-disc/model.ckpt.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    start_round: Option<usize>,
    /// Describe from the full ground-truth dialog, once per video.
    #[arg(long, conflicts_with_all = ["start_round", "no_dialog"])]
    strong_baseline: bool,
    /// Describe with no dialog at all, once per video.
    #[arg(long, conflicts_with = "start_round")]
    no_dialog: bool,
    /// Answer with the ground-truth answer paired to each selected question.
    #[arg(long)]
    simulated_human: bool,
    /// Shuffle each dialog's ground-truth pairs, seeded by --seed.
    #[arg(long)]
    shuffle_history: bool,
    #[arg(long, default_value_t = 3)]
    beam_width: usize,
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    /// Precomputed candidates from `cluster`.
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory (default: <data-dir>/runs/eval-<mode>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ServeArgs {
    /// One checkpoint per dialog mode to offer.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    idle_minutes: u64,
    /// Default: <data-dir>/sessions.jsonl.
    #[arg(long)]
    transcript_log: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<DialogMode, String> {
    s.parse().map_err(|e: qacoop_core::Error| e.to_string())
}

fn parse_attention(s: &str) -> Result<AttentionKind, String> {
    s.parse().map_err(|e: qacoop_core::Error| e.to_string())
}

fn parse_qbot_frames(s: &str) -> Result<QbotFrames, String> {
    s.parse().map_err(|e: qacoop_core::Error| e.to_string())
}

struct DataDir(PathBuf);

impl DataDir {
    fn dataset(&self) -> PathBuf {
        self.0.join("dataset.json")
    }

    fn features(&self) -> PathBuf {
        self.0.join("features").join("manifest.json")
    }

    /// `features/shape.json` when present, the full-size shape otherwise.
    fn shape(&self) -> Result<FeatureShape> {
        let path = self.0.join("features").join("shape.json");
        if !path.exists() {
            return Ok(FeatureShape::FULL);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn load(&self, min_count: usize) -> Result<(Vec<DialogCase>, Vocabulary, FeatureStore)> {
        let (cases, vocab) = ingest_dataset(&self.dataset(), min_count)?;
        let features = load_feature_store(&self.features(), self.shape()?)?;
        features.check_covers(&cases)?;
        Ok((cases, vocab, features))
    }

    fn run_dir(&self, out: &Option<PathBuf>, name: String) -> Result<PathBuf> {
        let dir = out.clone().unwrap_or_else(|| self.0.join("runs").join(name));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

/// The test split, or every dialog when there is none.
fn evaluation_cases(cases: &[DialogCase]) -> Vec<DialogCase> {
    let test = by_split(cases, Split::Test);
    if test.is_empty() {
        cases.to_vec()
    } else {
        test
    }
}

fn word_table(path: &Option<PathBuf>, vocab: &Vocabulary, seed: u64) -> Result<WordVectorTable> {
    Ok(match path {
        Some(p) => WordVectorTable::load(p)?,
        None => WordVectorTable::random(vocab.tokens().iter().map(String::as_str), DEFAULT_WORD_DIM, seed),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn toy(data: &DataDir, args: &ToyArgs) -> Result<()> {
    let (cases, store) = synthesize_toy_corpus(args.seed, args.n, args.vocab);
    fs::create_dir_all(&data.0).with_context(|| format!("creating {}", data.0.display()))?;
    fs::write(data.dataset(), serialize_dataset(&cases))?;
    let features = store.write(&data.0.join("features"))?;
    write_json(&data.0.join("features").join("shape.json"), &FeatureShape::TOY)?;
    let mut m = RunManifest::new("toy", args, args.seed);
    m.outputs = vec![data.dataset(), features];
    m.write(&data.0)?;
    println!("wrote {} toy dialogs to {}", cases.len(), data.0.display());
    Ok(())
}

fn prepare(data: &DataDir, args: &PrepareArgs) -> Result<()> {
    let (cases, vocab, features) = data.load(args.min_count)?;
    let vocab_path = data.0.join("vocab.json");
    write_json(&vocab_path, &vocab)?;
    let count = |s| cases.iter().filter(|c| c.split == s).count();
    let summary = serde_json::json!({
        "dialogs": { "train": count(Split::Train), "val": count(Split::Val), "test": count(Split::Test) },
        "videos_with_features": features.len(),
        "vocabulary": vocab.len(),
        "vocabulary_hash": vocab.hash(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    let mut m = RunManifest::new("prepare", args, 0);
    m.inputs = vec![data.dataset(), data.features()];
    m.outputs = vec![vocab_path];
    m.write(&data.0)?;
    Ok(())
}

fn cluster(data: &DataDir, args: &ClusterArgs) -> Result<()> {
    let (cases, vocab, _) = data.load(1)?;
    let mut set = build_inference_candidates(&evaluation_cases(&cases));
    set.cluster(&word_table(&args.word_vectors, &vocab, args.seed)?, args.clusters, args.seed)?;
    let out = args.out.clone().unwrap_or_else(|| data.0.join("candidates.json"));
    write_json(&out, &set)?;
    let sizes = |c: &Option<qacoop_core::candidates::ClusterAssignment>| c.as_ref().map(|c| c.sizes()).unwrap_or_default();
    println!("{} questions in clusters {:?}", set.questions.len(), sizes(&set.question_clusters));
    println!("{} answers in clusters {:?}", set.answers.len(), sizes(&set.answer_clusters));
    let mut m = RunManifest::new("cluster", args, args.seed);
    m.inputs = vec![data.dataset()];
    m.outputs = vec![out];
    m.write(&data.0)?;
    Ok(())
}

fn train(data: &DataDir, args: &TrainArgs) -> Result<()> {
    let (cases, vocab, features) = data.load(1)?;
    let shape = data.shape()?;
    let mode = args.model.mode;
    let mut config = if shape == FeatureShape::TOY { ModelConfig::toy(mode, 0) } else { ModelConfig::full(mode, 0) };
    config.features = shape;
    config.ablations = args.model.ablations();
    let mut model = Model::new(config, vocab, args.seed)?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        lambda_internal: args.lambda,
        ce_only_tail_epochs: args.ce_only_tail,
        patience: args.patience,
        max_epochs: args.epochs,
        seed: args.seed,
        no_reasoning: args.no_reasoning,
        n_candidates: args.n_candidates,
        threads: args.threads,
        ..Default::default()
    };
    let train_cases = by_split(&cases, Split::Train);
    let val_cases = by_split(&cases, Split::Val);
    let pool: Vec<QaPair> = train_cases.iter().flat_map(|c| c.qa_pairs.clone()).collect();
    let prepared = prepare_cases(&model, &train_cases, &features, &pool, &cfg)?;
    let val = prepare_cases(&model, &val_cases, &features, &pool, &cfg)?;
    let report = train_with_observer(&mut model, &prepared, &val, &cfg, |s| {
        log::info!(
            "epoch {:3}{} loss {:.4} ce {:.4} internal {:.4} val ppl {:.4}",
            s.epoch,
            if s.ce_only { " (ce only)" } else { "" },
            s.loss,
            s.description_ce,
            s.internal_loss,
            s.val_perplexity
        );
    })?;

    let dir = data.run_dir(&args.out, format!("train-{mode}"))?;
    let ckpt = dir.join("model.ckpt");
    let meta = CheckpointMeta {
        seed: args.seed,
        epoch: report.best_epoch,
        val_perplexity: Some(report.best_val_perplexity),
        train_config: Some(serde_json::to_value(&cfg)?),
    };
    checkpoint::save(&model, &meta, &ckpt)?;
    let report_path = dir.join("train_report.json");
    write_json(&report_path, &report)?;
    println!("best epoch {} (val perplexity {:.4}); checkpoint {}", report.best_epoch, report.best_val_perplexity, ckpt.display());

    let mut m = RunManifest::new("train", args, args.seed);
    m.config["train"] = serde_json::to_value(&cfg)?;
    m.inputs = vec![data.dataset(), data.features()];
    m.outputs = vec![ckpt.clone(), report_path];
    m.checkpoint_sha256 = Some(checkpoint::content_hash(&ckpt)?);
    m.write(&dir)?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Model> {
    if !path.exists() {
        bail!("checkpoint not found: {}", path.display());
    }
    Ok(checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?.0)
}

fn bank_for(model: &Model, cases: &[DialogCase], candidates: &Option<PathBuf>, words: &Option<PathBuf>, k: usize, seed: u64) -> Result<Option<CandidateBank>> {
    if model.mode() != DialogMode::Discriminative {
        return Ok(None);
    }
    Ok(Some(match candidates {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut set: CandidateSet = serde_json::from_str(&text)?;
            set.reindex();
            let clustered = set.question_clusters.is_some() && set.answer_clusters.is_some();
            CandidateBank::encode(model, set, clustered)?
        }
        None => {
            let table = words.as_deref().map(WordVectorTable::load).transpose()?;
            build_bank(model, cases, table.as_ref(), k, seed)?
        }
    }))
}

fn eval(data: &DataDir, args: &EvalArgs) -> Result<()> {
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| data.0.join("runs").join("train-disc").join("model.ckpt"));
    let model = load_checkpoint(&ckpt)?;
    let (cases, _, features) = data.load(1)?;
    let cases = evaluation_cases(&cases);
    let bank = bank_for(&model, &cases, &args.candidates, &args.word_vectors, args.clusters, args.seed)?;
    let mut config = EvalConfig {
        strong_baseline: args.strong_baseline,
        no_dialog: args.no_dialog,
        shuffle_history: args.shuffle_history.then_some(args.seed),
        start_round: args.start_round,
        clusters: args.clusters,
        seed: args.seed,
        threads: args.threads,
        ..Default::default()
    };
    config.episode.beam_width = args.beam_width;
    if args.simulated_human {
        config.episode.answer_source = AnswerSource::SimulatedHuman;
    }
    let out = evaluate(&model, &cases, &features, bank.as_ref(), &config)?;

    let dir = data.run_dir(&args.out, format!("eval-{}", model.mode()))?;
    let report_path = dir.join("report.json");
    let transcripts_path = dir.join("transcripts.jsonl");
    write_json(&report_path, &out.summary_json())?;
    fs::write(&transcripts_path, transcripts_to_jsonl(&out.transcripts))?;
    println!("{}", serde_json::to_string_pretty(&out.summary_json())?);

    let mut m = RunManifest::new("eval", args, args.seed);
    m.config["eval"] = serde_json::to_value(&config)?;
    m.inputs = vec![ckpt.clone(), data.dataset(), data.features()];
    m.outputs = vec![report_path, transcripts_path];
    m.checkpoint_sha256 = Some(checkpoint::content_hash(&ckpt)?);
    m.write(&dir)?;
    Ok(())
}

fn chat_serve(data: &DataDir, args: &ServeArgs) -> Result<()> {
    let (cases, _, features) = data.load(1)?;
    let mut deployments = Vec::new();
    for path in &args.checkpoint {
        let model = load_checkpoint(path)?;
        let bank = bank_for(&model, &cases, &None, &None, args.clusters, args.seed)?;
        deployments.push(Deployment::new(model, cases.clone(), features.clone(), bank)?);
    }
    let config = ServiceConfig {
        idle_timeout: Duration::from_secs(args.idle_minutes * 60),
        transcript_log: Some(args.transcript_log.clone().unwrap_or_else(|| data.0.join("sessions.jsonl"))),
        ..Default::default()
    };
    let service = Arc::new(Service::new(deployments, config));
    let runtime = tokio::runtime::Runtime::new()?;
    println!("serving {} videos on http://{}", cases.len(), args.addr);
    runtime.block_on(qacoop_service::serve(service, args.addr))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let data = DataDir(cli.data_dir);
    let result = match &cli.command {
        Command::Toy(a) => toy(&data, a),
        Command::Prepare(a) => prepare(&data, a),
        Command::Cluster(a) => cluster(&data, a),
        Command::Train(a) => train(&data, a),
        Command::Eval(a) => eval(&data, a),
        Command::ChatServe(a) => chat_serve(&data, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
