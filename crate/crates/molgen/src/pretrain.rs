//! Vocabulary construction and maximum-likelihood pretraining.
//!
//! The training loop is deterministic and resumable: batch composition is a
//! pure function of (seed, step), per-step dropout RNGs are keyed by step,
//! and the optimizer state is persisted next to each checkpoint, so a run
//! restarted from its last checkpoint replays the exact continuation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    checkpoint::fnv1a, load_checkpoint, save_checkpoint, sequence_nll_node, Mode, ModelCheckpoint,
    ModelConfig, ModelError, ModelParams, ParamNodes,
};
use crate::sample::{sample, SampleConfig, SampleError};
use crate::seeds::derive_seed;
use crate::smiles::{is_valid, load_corpus, SmilesError};
use crate::tensor::TensorError;
use crate::vocab::{VocabError, Vocabulary, UNK};
use crate::{AdamState, Real, Tape};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("corpus contains no usable training sequences")]
    EmptyCorpus,
    #[error("loss diverged to non-finite at step {step}; last good checkpoint is from step {}", last_good.step)]
    DivergedLoss {
        step: usize,
        last_good: Box<ModelCheckpoint>,
    },
    #[error("vocabulary has {vocab} tokens but model config declares {config}")]
    VocabMismatch { vocab: usize, config: usize },
    #[error("bad train config: {0}")]
    BadTrainConfig(String),
    #[error("resume checkpoint incompatible: {0}")]
    ResumeMismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PretrainError + '_ {
    move |source| PretrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Training hyperparameters. Deserializes leniently: omitted fields take
/// their defaults, so partial JSON config files work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: usize,
    /// Peak learning rate reached at the end of warmup.
    pub peak_lr: f64,
    /// Linear warmup length; inverse-sqrt decay afterwards.
    pub warmup_steps: usize,
    pub seed: u64,
    /// Fraction of corpus lines held out for validation, in [0, 0.5].
    pub validation_fraction: f64,
    /// Steps between record emission and checkpoint saves.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_steps: 2000,
            peak_lr: 3e-4,
            warmup_steps: 100,
            seed: 0,
            validation_fraction: 0.1,
            checkpoint_interval: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        let bad = |msg: &str| Err(PretrainError::BadTrainConfig(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be >= 1");
        }
        if !(self.peak_lr >= 0.0) {
            return bad("peak_lr must be >= 0");
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be >= 1");
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 0.5]");
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be >= 1");
        }
        Ok(())
    }

    /// Learning rate for 1-based step `s`: linear warmup to the peak, then
    /// inverse-sqrt decay.
    pub fn lr_at(&self, s: usize) -> f64 {
        let w = self.warmup_steps as f64;
        let s = s as f64;
        self.peak_lr * (s / w).min((w / s).sqrt())
    }
}

/// One telemetry record, emitted per interval per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: usize,
    pub split: String,
    pub nll: f64,
    pub validity_pct: f64,
    pub wall_ms: u64,
}

/// Outcome of a pretraining run.
#[derive(Debug)]
pub struct PretrainResult {
    pub checkpoint: ModelCheckpoint,
    pub records: Vec<RunRecord>,
    /// Lines dropped because their framed length exceeded the model's max_len.
    pub dropped_long: usize,
    /// Token occurrences mapped to UNK during encoding.
    pub unk_tokens: usize,
    pub checkpoint_path: PathBuf,
    pub records_path: PathBuf,
}

/// Optimizer-state sidecar written next to each checkpoint so a resumed run
/// continues bit-for-bit.
pub fn opt_sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".opt.json");
    checkpoint.with_file_name(name)
}

/// Build the vocabulary from a corpus file.
pub fn build_vocab(corpus: &Path) -> Result<Vocabulary, PretrainError> {
    let lines = load_corpus(corpus).map_err(io_err(corpus))?;
    if lines.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    Ok(Vocabulary::build(&lines)?)
}

/// A line belongs to validation iff its text hash lands under the fraction.
/// Hashing the raw text keeps the split stable across corpus reorderings.
fn is_validation_line(line: &str, fraction: f64) -> bool {
    const SCALE: u64 = 1 << 32;
    let threshold = (fraction * SCALE as f64).round() as u64;
    fnv1a(line.as_bytes()) % SCALE < threshold
}

struct SplitCorpus {
    train: Vec<Vec<usize>>,
    validation: Vec<Vec<usize>>,
    dropped_long: usize,
    unk_tokens: usize,
}

fn encode_and_split(
    lines: &[String],
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    fraction: f64,
) -> Result<SplitCorpus, PretrainError> {
    let mut out = SplitCorpus {
        train: Vec::new(),
        validation: Vec::new(),
        dropped_long: 0,
        unk_tokens: 0,
    };
    for line in lines {
        let framed = vocab.encode_framed(line)?;
        if framed.len() > model_cfg.max_len {
            out.dropped_long += 1;
            continue;
        }
        out.unk_tokens += framed.iter().filter(|&&id| id == UNK).count();
        if is_validation_line(line, fraction) {
            out.validation.push(framed);
        } else {
            out.train.push(framed);
        }
    }
    if out.train.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    Ok(out)
}

/// Index order for one epoch; keyed by (seed, epoch) so any step's batch can
/// be reconstructed without iterator state.
fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order
}

/// Mean NLL over a set of sequences, computed in batches (eval mode).
fn dataset_nll(
    params: &ModelParams,
    cfg: &ModelConfig,
    seqs: &[Vec<usize>],
    batch_size: usize,
) -> Result<Real, PretrainError> {
    let mut total = 0.0;
    for chunk in seqs.chunks(batch_size) {
        let mut tape = Tape::new();
        let nodes = ParamNodes::enter(&mut tape, params);
        let loss = sequence_nll_node(&mut tape, &nodes, cfg, chunk, &mut Mode::Eval)?;
        total += tape.value(loss).item() * chunk.len() as Real;
    }
    Ok(total / seqs.len() as Real)
}

/// Percentage of sampled strings that terminate and parse as valid SMILES.
fn sampled_validity_pct(ckpt: &ModelCheckpoint, seed: u64, step: usize) -> Result<f64, SampleError> {
    let cfg = SampleConfig {
        temperature: 1.0,
        greedy: false,
        max_len: ckpt.config.max_len - 1,
        batch_size: 50,
        seed: derive_seed(seed, &format!("validity-{step}")),
    };
    let batch = sample(ckpt, &cfg)?;
    let valid = batch
        .decoded
        .iter()
        .zip(&batch.terminated)
        .filter(|(s, &t)| t && is_valid(s))
        .count();
    Ok(100.0 * valid as f64 / batch.decoded.len() as f64)
}

fn snapshot(
    params: &ModelParams,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    step: usize,
) -> ModelCheckpoint {
    ModelCheckpoint {
        config: cfg.clone(),
        vocab: vocab.clone(),
        step: step as u64,
        params: params.clone(),
    }
}

/// Pretrain by maximum likelihood: minimize the batch-mean total NLL with
/// Adam under the warmup/inverse-sqrt schedule. Emits one record per split
/// per interval and saves a checkpoint (plus optimizer sidecar) at every
/// interval and at the end. Pass `resume` to continue a previous run from
/// its saved checkpoint.
pub fn pretrain(
    corpus: &Path,
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<PretrainResult, PretrainError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if vocab.size() != model_cfg.vocab_size {
        return Err(PretrainError::VocabMismatch {
            vocab: vocab.size(),
            config: model_cfg.vocab_size,
        });
    }

    let lines = load_corpus(corpus).map_err(io_err(corpus))?;
    let split = encode_and_split(&lines, vocab, model_cfg, train_cfg.validation_fraction)?;

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    let records_path = out_dir.join(RECORDS_FILE);

    // Fresh init or resume from a saved checkpoint + optimizer sidecar.
    let (mut params, mut adam, start_step) = match resume {
        None => {
            let params = ModelParams::init(model_cfg, derive_seed(train_cfg.seed, "init"))?;
            let adam = AdamState::new(0.0, &snapshot_arrays(&params));
            (params, adam, 0)
        }
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.config != *model_cfg {
                return Err(PretrainError::ResumeMismatch(
                    "model config differs from the checkpoint's".into(),
                ));
            }
            if ckpt.vocab.tokens() != vocab.tokens() {
                return Err(PretrainError::ResumeMismatch(
                    "vocabulary differs from the checkpoint's".into(),
                ));
            }
            let sidecar = opt_sidecar_path(path);
            let text = fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
            let adam: AdamState = serde_json::from_str(&text)
                .map_err(|e| PretrainError::ResumeMismatch(format!("optimizer sidecar: {e}")))?;
            (ckpt.params, adam, ckpt.step as usize)
        }
    };

    let mut records_file = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .write(true)
        .open(&records_path)
        .map_err(io_err(&records_path))?;

    let mut last_good = snapshot(&params, model_cfg, vocab, start_step);
    let mut records = Vec::new();
    let started = Instant::now();
    let batches_per_epoch = split.train.len().div_ceil(train_cfg.batch_size);
    let mut cached_epoch = u64::MAX;
    let mut order: Vec<usize> = Vec::new();
    let mut interval_nll_sum = 0.0;
    let mut interval_nll_count = 0usize;

    for step in start_step..train_cfg.max_steps {
        // Reconstruct this step's batch from (seed, step) alone.
        let epoch = (step / batches_per_epoch) as u64;
        if epoch != cached_epoch {
            order = epoch_order(split.train.len(), train_cfg.seed, epoch);
            cached_epoch = epoch;
        }
        let at = (step % batches_per_epoch) * train_cfg.batch_size;
        let end = (at + train_cfg.batch_size).min(order.len());
        let batch: Vec<Vec<usize>> = order[at..end]
            .iter()
            .map(|&i| split.train[i].clone())
            .collect();

        let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(train_cfg.seed, "dropout"));
        dropout_rng.set_stream(step as u64);

        let mut tape = Tape::new();
        let nodes = ParamNodes::enter(&mut tape, &params);
        let loss = sequence_nll_node(
            &mut tape,
            &nodes,
            model_cfg,
            &batch,
            &mut Mode::Train(&mut dropout_rng),
        )?;
        let loss_val = tape.value(loss).item();
        if !loss_val.is_finite() {
            return Err(PretrainError::DivergedLoss {
                step,
                last_good: Box::new(last_good),
            });
        }
        interval_nll_sum += loss_val;
        interval_nll_count += 1;

        let grads = tape.backward(loss)?;
        let grad_arrays: Vec<_> = nodes
            .nodes
            .iter()
            .zip(params.param_list())
            .map(|(&id, p)| grads.get_or_zeros(id, p.shape()))
            .collect();
        adam.lr = train_cfg.lr_at(step + 1);
        adam.step(&mut params.param_list_mut(), &grad_arrays)?;

        let done = step + 1;
        if done.is_multiple_of(train_cfg.checkpoint_interval) || done == train_cfg.max_steps {
            let ckpt = snapshot(&params, model_cfg, vocab, done);
            let validity_pct = sampled_validity_pct(&ckpt, train_cfg.seed, done)?;
            let wall_ms = started.elapsed().as_millis() as u64;
            let mut interval = vec![RunRecord {
                step: done,
                split: "train".into(),
                nll: interval_nll_sum / interval_nll_count as f64,
                validity_pct,
                wall_ms,
            }];
            if !split.validation.is_empty() {
                interval.push(RunRecord {
                    step: done,
                    split: "validation".into(),
                    nll: dataset_nll(
                        &params,
                        model_cfg,
                        &split.validation,
                        train_cfg.batch_size,
                    )?,
                    validity_pct,
                    wall_ms,
                });
            }
            for r in &interval {
                let line = serde_json::to_string(r).expect("record serializes");
                writeln!(records_file, "{line}").map_err(io_err(&records_path))?;
            }
            records.extend(interval);
            interval_nll_sum = 0.0;
            interval_nll_count = 0;

            save_checkpoint(&ckpt, &checkpoint_path)?;
            let sidecar = opt_sidecar_path(&checkpoint_path);
            let text = serde_json::to_string(&adam).expect("optimizer state serializes");
            fs::write(&sidecar, text).map_err(io_err(&sidecar))?;
            last_good = ckpt;
        }
    }

    Ok(PretrainResult {
        checkpoint: last_good,
        records,
        dropped_long: split.dropped_long,
        unk_tokens: split.unk_tokens,
        checkpoint_path,
        records_path,
    })
}

/// Owned copies of the parameter arrays in declared order (for AdamState::new).
fn snapshot_arrays(params: &ModelParams) -> Vec<crate::Array> {
    params.param_list().into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_corpus(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    fn tiny_model(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            max_len: 12,
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            dropout_rate: 0.0,
        }
    }

    fn quick_train(max_steps: usize, peak_lr: f64) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            max_steps,
            peak_lr,
            warmup_steps: 10,
            seed: 7,
            validation_fraction: 0.0,
            checkpoint_interval: max_steps,
        }
    }

    #[test]
    fn build_vocab_from_file() {
        let dir = tempdir().unwrap();
        let path = write_corpus(dir.path(), "c.smi", &["CCl", "CBr"]);
        let vocab = build_vocab(&path).unwrap();
        assert_eq!(vocab.tokens()[4..], ["Br", "C", "Cl"]);

        let empty = write_corpus(dir.path(), "e.smi", &["", "# comment"]);
        assert!(matches!(
            build_vocab(&empty),
            Err(PretrainError::EmptyCorpus)
        ));
    }

    #[test]
    fn lr_schedule_shape() {
        let cfg = TrainConfig {
            warmup_steps: 100,
            peak_lr: 3e-4,
            ..TrainConfig::default()
        };
        assert!((cfg.lr_at(50) - 1.5e-4).abs() < 1e-12);
        assert!((cfg.lr_at(100) - 3e-4).abs() < 1e-12);
        assert!((cfg.lr_at(400) - 1.5e-4).abs() < 1e-12); // sqrt(100/400) = 1/2
        assert!(cfg.lr_at(101) < 3e-4);
    }

    #[test]
    fn validation_split_is_stable_under_reordering() {
        let frac = 0.3;
        let lines: Vec<String> = (1..=10).map(|n| "C".repeat(n)).collect();
        let marks: Vec<bool> = lines.iter().map(|l| is_validation_line(l, frac)).collect();
        let mut reversed = lines.clone();
        reversed.reverse();
        let marks_rev: Vec<bool> = reversed
            .iter()
            .rev()
            .map(|l| is_validation_line(l, frac))
            .collect();
        assert_eq!(marks, marks_rev);
        assert!(marks.iter().any(|&m| m) || frac == 0.0);
    }

    #[test]
    fn memorizes_single_sequence() {
        let dir = tempdir().unwrap();
        let path = write_corpus(dir.path(), "c.smi", &["CCO"]);
        let vocab = build_vocab(&path).unwrap();
        let model_cfg = tiny_model(vocab.size());
        let train_cfg = TrainConfig {
            batch_size: 1,
            ..quick_train(200, 0.02)
        };
        let out = pretrain(&path, &vocab, &model_cfg, &train_cfg, dir.path(), None).unwrap();
        let nll = crate::model::sequence_nll(
            &out.checkpoint.params,
            &model_cfg,
            &[vocab.encode_framed("CCO").unwrap()],
        )
        .unwrap();
        assert!(nll < 0.1, "memorization NLL {nll}");
        assert_eq!(out.checkpoint.step, 200);
        assert!(out.checkpoint_path.exists());
        assert!(opt_sidecar_path(&out.checkpoint_path).exists());
    }

    #[test]
    fn zero_learning_rate_keeps_nll_constant() {
        let dir = tempdir().unwrap();
        let path = write_corpus(dir.path(), "c.smi", &["CCO", "CCN", "CO"]);
        let vocab = build_vocab(&path).unwrap();
        let model_cfg = tiny_model(vocab.size());
        let mut train_cfg = quick_train(30, 0.0);
        train_cfg.checkpoint_interval = 10;
        let out = pretrain(&path, &vocab, &model_cfg, &train_cfg, dir.path(), None).unwrap();
        let train_nlls: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.split == "train")
            .map(|r| r.nll)
            .collect();
        assert_eq!(train_nlls.len(), 3);
        for w in train_nlls.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn drops_overlong_lines_and_counts_unk() {
        let dir = tempdir().unwrap();
        let long = "C".repeat(30);
        let path = write_corpus(dir.path(), "c.smi", &["CCO", &long, "CC"]);
        // vocabulary built elsewhere, missing O → O maps to UNK
        let vocab = Vocabulary::build(&["CC".to_string()]).unwrap();
        let model_cfg = tiny_model(vocab.size());
        let out = pretrain(
            &path,
            &vocab,
            &model_cfg,
            &quick_train(5, 1e-3),
            dir.path(),
            None,
        )
        .unwrap();
        assert_eq!(out.dropped_long, 1);
        assert_eq!(out.unk_tokens, 1);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let dir = tempdir().unwrap();
        let path = write_corpus(dir.path(), "c.smi", &["# only a comment", ""]);
        let vocab = Vocabulary::build(&["C".to_string()]).unwrap();
        let model_cfg = tiny_model(vocab.size());
        assert!(matches!(
            pretrain(
                &path,
                &vocab,
                &model_cfg,
                &quick_train(5, 1e-3),
                dir.path(),
                None
            ),
            Err(PretrainError::EmptyCorpus)
        ));
    }

    #[test]
    fn records_are_emitted_per_interval_and_persisted() {
        let dir = tempdir().unwrap();
        // "CCCC" hashes below the 0.4 split threshold; the others land above,
        // so both splits are non-empty by construction
        let path = write_corpus(
            dir.path(),
            "c.smi",
            &["CCO", "CCN", "CO", "CN", "CC", "C", "OCO", "CCCC"],
        );
        let vocab = build_vocab(&path).unwrap();
        let model_cfg = tiny_model(vocab.size());
        let train_cfg = TrainConfig {
            batch_size: 4,
            max_steps: 20,
            peak_lr: 1e-3,
            warmup_steps: 10,
            seed: 3,
            validation_fraction: 0.4,
            checkpoint_interval: 10,
        };
        let out = pretrain(&path, &vocab, &model_cfg, &train_cfg, dir.path(), None).unwrap();
        let steps: Vec<(usize, &str)> = out
            .records
            .iter()
            .map(|r| (r.step, r.split.as_str()))
            .collect();
        assert!(steps.contains(&(10, "train")) && steps.contains(&(20, "train")));
        assert!(steps.contains(&(10, "validation")) || train_cfg.validation_fraction == 0.0);

        let text = fs::read_to_string(&out.records_path).unwrap();
        let parsed: Vec<RunRecord> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed, out.records);
    }

    #[test]
    fn training_reduces_nll() {
        let dir = tempdir().unwrap();
        let lines: Vec<String> = (1..=8).map(|n| "C".repeat(n)).collect();
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let path = write_corpus(dir.path(), "c.smi", &refs);
        let vocab = build_vocab(&path).unwrap();
        let model_cfg = tiny_model(vocab.size());
        let mut train_cfg = quick_train(60, 5e-3);
        train_cfg.checkpoint_interval = 20;
        let out = pretrain(&path, &vocab, &model_cfg, &train_cfg, dir.path(), None).unwrap();
        let train_nlls: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.split == "train")
            .map(|r| r.nll)
            .collect();
        assert!(
            train_nlls.last().unwrap() < train_nlls.first().unwrap(),
            "{train_nlls:?}"
        );
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let lines: Vec<String> = (1..=6).map(|n| "C".repeat(n)).collect();
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let path = write_corpus(dir_a.path(), "c.smi", &refs);
        let vocab = build_vocab(&path).unwrap();
        let model_cfg = tiny_model(vocab.size());
        let full_cfg = TrainConfig {
            batch_size: 2,
            max_steps: 24,
            peak_lr: 2e-3,
            warmup_steps: 5,
            seed: 11,
            validation_fraction: 0.0,
            checkpoint_interval: 8,
        };

        // uninterrupted run
        let full = pretrain(&path, &vocab, &model_cfg, &full_cfg, dir_a.path(), None).unwrap();

        // interrupted at step 16, resumed to 24
        let short_cfg = TrainConfig {
            max_steps: 16,
            ..full_cfg.clone()
        };
        let part = pretrain(&path, &vocab, &model_cfg, &short_cfg, dir_b.path(), None).unwrap();
        let resumed = pretrain(
            &path,
            &vocab,
            &model_cfg,
            &full_cfg,
            dir_b.path(),
            Some(&part.checkpoint_path),
        )
        .unwrap();

        assert_eq!(resumed.checkpoint.params, full.checkpoint.params);
        let tail_full: Vec<&RunRecord> =
            full.records.iter().filter(|r| r.step > 16).collect();
        let tail_resumed: Vec<&RunRecord> = resumed.records.iter().collect();
        assert_eq!(tail_resumed.len(), tail_full.len());
        for (a, b) in tail_full.iter().zip(&tail_resumed) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.nll, b.nll);
            assert_eq!(a.validity_pct, b.validity_pct);
        }
    }

    #[test]
    fn determinism_across_identical_runs() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let path = write_corpus(dir_a.path(), "c.smi", &["CCO", "CCN", "CC"]);
        let vocab = build_vocab(&path).unwrap();
        let model_cfg = ModelConfig {
            dropout_rate: 0.1, // exercise the dropout RNG path
            ..tiny_model(vocab.size())
        };
        let train_cfg = quick_train(12, 1e-3);
        let a = pretrain(&path, &vocab, &model_cfg, &train_cfg, dir_a.path(), None).unwrap();
        let b = pretrain(&path, &vocab, &model_cfg, &train_cfg, dir_b.path(), None).unwrap();
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
        assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.nll, y.nll);
        }
    }

    #[test]
    fn vocab_config_mismatch_is_an_error() {
        let dir = tempdir().unwrap();
        let path = write_corpus(dir.path(), "c.smi", &["CCO"]);
        let vocab = build_vocab(&path).unwrap();
        let model_cfg = tiny_model(vocab.size() + 1);
        assert!(matches!(
            pretrain(
                &path,
                &vocab,
                &model_cfg,
                &quick_train(5, 1e-3),
                dir.path(),
                None
            ),
            Err(PretrainError::VocabMismatch { .. })
        ));
    }

}
