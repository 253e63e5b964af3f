//! Autoregressive sampling from a model checkpoint.
//!
//! Randomness is counter-based: sequence `i` at generation step `s` always
//! consumes the same RNG words for a given seed — the stream id is the
//! sequence index and the word position is derived from the step — so
//! changing the batch size never perturbs any sequence's draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{forward_sequence, Mode, ModelCheckpoint, ModelError, ParamNodes};
use crate::vocab::{EOS, GO};
use crate::{Real, Tape};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("temperature must be > 0, got {0}")]
    BadTemperature(f64),
    #[error("sample max_len {requested} exceeds model max_len {model} (one slot is reserved for GO)")]
    MaxLenExceedsModel { requested: usize, model: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sampling controls. Deserializes leniently: omitted fields take their
/// defaults, so partial JSON config files work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    /// Softmax temperature for the draw distribution.
    pub temperature: f64,
    /// Argmax decoding (the temperature→0 limit); temperature is ignored.
    pub greedy: bool,
    /// Maximum number of drawn tokens per sequence, including EOS.
    pub max_len: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            temperature: 1.0,
            greedy: false,
            max_len: 100,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// One batch of sampled sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    /// Drawn token ids per sequence; ends with EOS iff terminated.
    pub sequences: Vec<Vec<usize>>,
    /// True iff generation stopped at EOS rather than the length cap.
    pub terminated: Vec<bool>,
    /// Token texts joined, control tokens excluded.
    pub decoded: Vec<String>,
    /// Model log-likelihood of each sequence (untempered), present when
    /// sampled via [`sample_with_logprob`]. For terminated sequences this
    /// equals the framed-sequence log-probability; for truncated ones it
    /// covers the drawn prefix only.
    pub logprobs: Option<Vec<Real>>,
}

/// Pick an index from `logits` given a uniform draw `u` in [0,1).
///
/// Greedy takes the argmax (first on ties); otherwise the draw is by
/// inverse CDF over softmax(logits/temperature).
fn draw_from_logits(logits: &[Real], temperature: f64, greedy: bool, u: f64) -> usize {
    if greedy {
        let mut best = 0;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let m = logits.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let weights: Vec<Real> = logits.iter().map(|&x| ((x - m) / temperature).exp()).collect();
    let total: Real = weights.iter().sum();
    let mut acc = 0.0;
    let target = u * total;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.len() - 1 // u rounded against the final cumulative sum
}

/// Log-softmax of one logits row at one index (untempered).
fn logprob_at(logits: &[Real], index: usize) -> Real {
    let m = logits.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let z: Real = logits.iter().map(|&x| (x - m).exp()).sum();
    logits[index] - m - z.ln()
}

/// RNG positioned for (seed, sequence index, step): stream = sequence,
/// word position = 2 words per step (one f64 draw).
fn rng_at(seed: u64, seq_idx: usize, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(seq_idx as u64);
    rng.set_word_pos(2 * step as u128);
    rng
}

fn validate(model_cfg: &crate::model::ModelConfig, cfg: &SampleConfig) -> Result<(), SampleError> {
    if !(cfg.temperature > 0.0) {
        return Err(SampleError::BadTemperature(cfg.temperature));
    }
    if cfg.max_len + 1 > model_cfg.max_len {
        return Err(SampleError::MaxLenExceedsModel {
            requested: cfg.max_len,
            model: model_cfg.max_len,
        });
    }
    Ok(())
}

/// Sample from bare parameters; the building block behind [`sample`] and
/// the fine-tuning loop (which holds params outside a checkpoint).
pub fn sample_parts(
    params: &crate::model::ModelParams,
    model_cfg: &crate::model::ModelConfig,
    vocab: &crate::vocab::Vocabulary,
    cfg: &SampleConfig,
    want_logprobs: bool,
) -> Result<SampleBatch, SampleError> {
    validate(model_cfg, cfg)?;
    let mut sequences = Vec::with_capacity(cfg.batch_size);
    let mut terminated = Vec::with_capacity(cfg.batch_size);
    let mut decoded = Vec::with_capacity(cfg.batch_size);
    let mut logprobs = Vec::with_capacity(cfg.batch_size);

    for i in 0..cfg.batch_size {
        // one tape per sequence: parameters entered once, each step's
        // forward pass reuses the same leaves
        let mut tape = Tape::new();
        let nodes = ParamNodes::enter(&mut tape, params);
        let mut ctx = vec![GO];
        let mut seq = Vec::new();
        let mut done = false;
        let mut lp = 0.0;
        for step in 0..cfg.max_len {
            let logits_id =
                forward_sequence(&mut tape, &nodes, model_cfg, &ctx, &mut Mode::Eval)?;
            let v = tape.value(logits_id);
            let row = v.row(v.rows() - 1).to_vec();
            let u: f64 = rng_at(cfg.seed, i, step).random();
            let tok = draw_from_logits(&row, cfg.temperature, cfg.greedy, u);
            lp += logprob_at(&row, tok);
            seq.push(tok);
            if tok == EOS {
                done = true;
                break;
            }
            ctx.push(tok);
        }
        decoded.push(vocab.decode(&seq));
        sequences.push(seq);
        terminated.push(done);
        logprobs.push(lp);
    }

    Ok(SampleBatch {
        sequences,
        terminated,
        decoded,
        logprobs: want_logprobs.then_some(logprobs),
    })
}

/// Sample a batch of sequences.
pub fn sample(ckpt: &ModelCheckpoint, cfg: &SampleConfig) -> Result<SampleBatch, SampleError> {
    sample_parts(&ckpt.params, &ckpt.config, &ckpt.vocab, cfg, false)
}

/// Sample a batch and report each sequence's model log-likelihood.
pub fn sample_with_logprob(
    ckpt: &ModelCheckpoint,
    cfg: &SampleConfig,
) -> Result<SampleBatch, SampleError> {
    sample_parts(&ckpt.params, &ckpt.config, &ckpt.vocab, cfg, true)
}
