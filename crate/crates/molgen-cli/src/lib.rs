//! Command-line pipeline runner.
//!
//! One subcommand per pipeline stage: `build-vocab`, `pretrain`, `sample`,
//! `finetune`, `evaluate`. Every run owns one output directory and writes
//! its fully resolved configuration there before doing any work, so each
//! artifact is auditable from its directory alone. Flags override JSON
//! config file values, which override built-in defaults. All randomness
//! derives from the single `seed` in the resolved config.
//!
//! On success the process prints a single-line JSON record of the artifact
//! paths to stdout; on failure it prints a single-line JSON error record to
//! stderr and exits nonzero. The `MOLGEN_OUT_ROOT` environment variable, if
//! set, prefixes relative output directories; nothing else reads the
//! environment.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use molgen::metrics::{self, MetricError};
use molgen::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelError};
use molgen::oracle::{builtin_names, lookup, OracleError, OracleLedger, OracleSpec};
use molgen::pretrain::{build_vocab, pretrain, PretrainError, TrainConfig};
use molgen::rl::{finetune, RLConfig, RLError};
use molgen::sample::{sample, sample_with_logprob, SampleConfig, SampleError};
use molgen::vocab::Vocabulary;

/// Environment variable that prefixes relative `--out` paths.
pub const OUT_ROOT_ENV: &str = "MOLGEN_OUT_ROOT";

pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const AGENT_FILE: &str = "agent.bin";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SAMPLES_FILE: &str = "samples.smi";
pub const SAMPLES_JSONL_FILE: &str = "samples.jsonl";
pub const RL_RECORDS_FILE: &str = "records.jsonl";
pub const LENGTH_BINS_FILE: &str = "length_bins.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Rl(#[from] RLError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json",
            CliError::Model(_) => "model",
            CliError::Pretrain(_) => "pretrain",
            CliError::Sample(_) => "sample",
            CliError::Oracle(_) => "oracle",
            CliError::Metric(_) => "metric",
            CliError::Rl(_) => "rl",
        }
    }

    /// Single-line machine-readable error record.
    pub fn record(&self) -> String {
        json!({ "error": self.to_string(), "kind": self.kind() }).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "molgen", version, about = "SMILES generation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a token vocabulary from a SMILES corpus
    BuildVocab(BuildVocabArgs),
    /// Train a prior by maximum likelihood on a corpus
    Pretrain(PretrainArgs),
    /// Draw sequences from a trained checkpoint
    Sample(SampleArgs),
    /// Fine-tune a prior against a budgeted oracle
    Finetune(FinetuneArgs),
    /// Compute budget-aware metrics from an oracle ledger
    Evaluate(EvaluateArgs),
}

/// Dispatch a parsed command line; returns the success record.
pub fn run(cli: Cli) -> Result<Value, CliError> {
    match cli.command {
        Command::BuildVocab(a) => cmd_build_vocab(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

// ---------------------------------------------------------------- plumbing

fn resolve_out(out: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_run_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(io_err(out))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse the optional `--config` file, falling back to defaults.
fn load_config_file<T: for<'de> Deserialize<'de> + Default>(
    path: Option<&Path>,
) -> Result<T, CliError> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

macro_rules! apply {
    ($cfg:expr, $args:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $args.$field { $cfg.$field = v; })+
    };
}

// -------------------------------------------------------------- build-vocab

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// SMILES corpus, one molecule per line
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run output directory
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_build_vocab(args: BuildVocabArgs) -> Result<Value, CliError> {
    let out = resolve_out(&args.out);
    create_run_dir(&out)?;
    let resolved = json!({
        "subcommand": "build-vocab",
        "corpus": args.corpus,
        "out": out,
    });
    write_json_pretty(&out.join(CONFIG_FILE), &resolved)?;

    let vocab = build_vocab(&args.corpus)?;
    let vocab_path = out.join(VOCAB_FILE);
    write_json_pretty(&vocab_path, &vocab)?;
    Ok(json!({ "vocab": vocab_path, "tokens": vocab.size() }))
}

// ----------------------------------------------------------------- pretrain

/// Architecture knobs exposed to config files; `vocab_size` is always
/// derived from the vocabulary, never configured.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            max_len: 64,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            dropout_rate: 0.1,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct PretrainFile {
    model: ModelSettings,
    train: TrainConfig,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// SMILES corpus, one molecule per line
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Reuse a vocabulary JSON instead of building one from the corpus
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// JSON config file with optional "model" and "train" groups
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a previously saved checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,

    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,

    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
}

fn cmd_pretrain(args: PretrainArgs) -> Result<Value, CliError> {
    let out = resolve_out(&args.out);
    create_run_dir(&out)?;

    let file: PretrainFile = load_config_file(args.config.as_deref())?;
    let mut model = file.model;
    let mut train = file.train;
    apply!(model, args, max_len, d_model, n_heads, n_layers, d_ff, dropout_rate);
    apply!(
        train, args, batch_size, max_steps, peak_lr, warmup_steps, seed,
        validation_fraction, checkpoint_interval,
    );

    let vocab: Vocabulary = match &args.vocab {
        Some(path) => read_json(path)?,
        None => build_vocab(&args.corpus)?,
    };
    let model_cfg = ModelConfig {
        vocab_size: vocab.size(),
        max_len: model.max_len,
        d_model: model.d_model,
        n_heads: model.n_heads,
        n_layers: model.n_layers,
        d_ff: model.d_ff,
        dropout_rate: model.dropout_rate,
    };

    let resolved = json!({
        "subcommand": "pretrain",
        "corpus": args.corpus,
        "vocab": args.vocab,
        "out": out,
        "resume": args.resume,
        "model": model_cfg,
        "train": train,
    });
    write_json_pretty(&out.join(CONFIG_FILE), &resolved)?;
    let vocab_path = out.join(VOCAB_FILE);
    write_json_pretty(&vocab_path, &vocab)?;

    let result = pretrain(
        &args.corpus,
        &vocab,
        &model_cfg,
        &train,
        &out,
        args.resume.as_deref(),
    )?;
    Ok(json!({
        "checkpoint": result.checkpoint_path,
        "records": result.records_path,
        "vocab": vocab_path,
        "steps": result.checkpoint.step,
        "dropped_long": result.dropped_long,
        "unk_tokens": result.unk_tokens,
    }))
}

// ------------------------------------------------------------------- sample

/// Sampling controls as they appear in config files: every field optional
/// so an unset `max_len` can default to the checkpoint's own capacity.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct SampleFile {
    temperature: Option<f64>,
    greedy: Option<bool>,
    max_len: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Trained model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run output directory
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file holding sampling controls
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of sequences to draw
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Take the argmax token at every step
    #[arg(long)]
    pub greedy: bool,
    /// Longest sequence to draw (default: the model's capacity)
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write samples.jsonl with {smiles, logprob, terminated}
    #[arg(long)]
    pub jsonl: bool,
}

fn cmd_sample(args: SampleArgs) -> Result<Value, CliError> {
    let out = resolve_out(&args.out);
    create_run_dir(&out)?;

    let ckpt = load_checkpoint(&args.checkpoint)?;
    let file: SampleFile = load_config_file(args.config.as_deref())?;
    let defaults = SampleConfig::default();
    let cfg = SampleConfig {
        temperature: args
            .temperature
            .or(file.temperature)
            .unwrap_or(defaults.temperature),
        greedy: args.greedy || file.greedy.unwrap_or(defaults.greedy),
        max_len: args
            .max_len
            .or(file.max_len)
            .unwrap_or(ckpt.config.max_len - 1),
        batch_size: args
            .n
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
    };

    let resolved = json!({
        "subcommand": "sample",
        "checkpoint": args.checkpoint,
        "out": out,
        "sample": cfg,
        "jsonl": args.jsonl,
    });
    write_json_pretty(&out.join(CONFIG_FILE), &resolved)?;

    let batch = if args.jsonl {
        sample_with_logprob(&ckpt, &cfg)?
    } else {
        sample(&ckpt, &cfg)?
    };

    let samples_path = out.join(SAMPLES_FILE);
    let mut smi = String::new();
    for line in &batch.decoded {
        smi.push_str(line);
        smi.push('\n');
    }
    write_text(&samples_path, &smi)?;

    let jsonl_path = if args.jsonl {
        let logprobs = batch.logprobs.as_ref().expect("logprobs requested");
        let mut text = String::new();
        for i in 0..batch.decoded.len() {
            let line = json!({
                "smiles": batch.decoded[i],
                "logprob": logprobs[i],
                "terminated": batch.terminated[i],
            });
            text.push_str(&line.to_string());
            text.push('\n');
        }
        let path = out.join(SAMPLES_JSONL_FILE);
        write_text(&path, &text)?;
        Some(path)
    } else {
        None
    };

    Ok(json!({
        "samples": samples_path,
        "jsonl": jsonl_path,
        "n": batch.decoded.len(),
        "terminated": batch.terminated.iter().filter(|&&t| t).count(),
    }))
}

// ----------------------------------------------------------------- finetune

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FinetuneFile {
    rl: RLConfig,
    /// Full oracle spec; overridden by `--oracle <builtin name>`.
    oracle: Option<OracleSpec>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Pretrained prior checkpoint
    #[arg(long)]
    pub prior: PathBuf,
    /// Builtin oracle name (overrides the config file's oracle)
    #[arg(long)]
    pub oracle: Option<String>,
    /// Run output directory
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file with optional "rl" and "oracle" groups
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub replay_capacity: Option<usize>,
    #[arg(long)]
    pub replay_sample: Option<usize>,
    #[arg(long)]
    pub oracle_budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn cmd_finetune(args: FinetuneArgs) -> Result<Value, CliError> {
    let out = resolve_out(&args.out);
    create_run_dir(&out)?;

    let file: FinetuneFile = load_config_file(args.config.as_deref())?;
    let mut rl = file.rl;
    apply!(
        rl, args, sigma, batch_size, max_steps, lr, replay_capacity,
        replay_sample, oracle_budget, seed,
    );
    let spec = match (&args.oracle, file.oracle) {
        (Some(name), _) => lookup(name)?,
        (None, Some(spec)) => spec,
        (None, None) => {
            return Err(CliError::Usage(format!(
                "an oracle is required: pass --oracle <name> (one of {}) or an \
                 \"oracle\" object in --config",
                builtin_names().join(", ")
            )))
        }
    };

    let resolved = json!({
        "subcommand": "finetune",
        "prior": args.prior,
        "out": out,
        "oracle": spec,
        "rl": rl,
    });
    write_json_pretty(&out.join(CONFIG_FILE), &resolved)?;

    let prior = load_checkpoint(&args.prior)?;
    let result = finetune(&prior, &spec, &rl)?;

    let agent_path = out.join(AGENT_FILE);
    save_checkpoint(&result.agent, &agent_path)?;
    let records_path = out.join(RL_RECORDS_FILE);
    write_text(&records_path, &jsonl(&result.records))?;
    let ledger_path = out.join(LEDGER_FILE);
    result.ledger.write(&ledger_path)?;

    Ok(json!({
        "agent": agent_path,
        "records": records_path,
        "ledger": ledger_path,
        "stop": result.stop,
        "steps": result.records.len(),
        "oracle_calls": result.ledger.entries().len(),
        "best_score": result.records.last().map(|r| r.best_score),
    }))
}

// ----------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Oracle ledger written by a finetune run
    #[arg(long)]
    pub ledger: PathBuf,
    /// Run output directory
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<Value, CliError> {
    let out = resolve_out(&args.out);
    create_run_dir(&out)?;
    let resolved = json!({
        "subcommand": "evaluate",
        "ledger": args.ledger,
        "out": out,
    });
    write_json_pretty(&out.join(CONFIG_FILE), &resolved)?;

    let ledger = OracleLedger::read(&args.ledger)?;
    let report = metrics::report(&ledger, ledger.oracle())?;

    let report_path = out.join(REPORT_FILE);
    write_json_pretty(&report_path, &report)?;

    let mut csvs = Vec::new();
    for k in [1usize, 10, 100] {
        let curve = metrics::running_top_k_curve(&ledger, k, ledger.budget())?;
        let mut text = format!("call,t_{k}\n");
        for (i, v) in curve.iter().enumerate() {
            text.push_str(&format!("{},{v}\n", i + 1));
        }
        let path = out.join(format!("topk_curve_k{k}.csv"));
        write_text(&path, &text)?;
        csvs.push(path);
    }

    let mut bins = String::from("lo,hi,count,mean,q1,median,q3\n");
    for b in &report.length.bins {
        bins.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            b.lo, b.hi, b.count, b.mean, b.q1, b.median, b.q3
        ));
    }
    let bins_path = out.join(LENGTH_BINS_FILE);
    write_text(&bins_path, &bins)?;
    csvs.push(bins_path);

    Ok(json!({
        "report": report_path,
        "csvs": csvs,
        "auc_top1": report.auc_top1,
        "auc_top10": report.auc_top10,
        "auc_top100": report.auc_top100,
    }))
}
