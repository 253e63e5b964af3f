//! Decoder-only transformer over token sequences.
//!
//! Pre-layer-norm blocks, learned positional embeddings, strict causal
//! masking. Sequences are processed one at a time at their true length on a
//! shared tape — there is no internal padding, which makes the causality
//! guarantee bitwise: position t's logits are computed from exactly the
//! embeddings at positions ≤ t.

pub(crate) mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{NodeId, TensorError};
use crate::vocab::{EOS, GO};
use crate::{Array, Real, Tape};

/// Fill value for masked attention scores. Chosen so that after row-max
/// subtraction the exponential underflows to exactly +0.0, making masked
/// attention weights exactly zero (bitwise causality).
const MASK_FILL: Real = -1e30;

const LN_EPS: Real = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    UnknownTokenId { id: usize, vocab: usize },
    #[error("sequence is not GO-framed with terminal EOS")]
    UnframedSequence,
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Applied in training mode only; all evaluation and sampling paths
    /// run with dropout disabled.
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0, // filled from the vocabulary
            max_len: 128,
            d_model: 256,
            n_heads: 8,
            n_layers: 4,
            d_ff: 1024,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::BadConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(ModelError::BadConfig("max_len must be ≥ 2".into()));
        }
        if self.vocab_size == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(ModelError::BadConfig("zero-sized dimension".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::BadConfig("dropout_rate outside [0,1)".into()));
        }
        Ok(())
    }
}

/// One transformer block's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gamma: Array,
    pub ln1_beta: Array,
    pub wq: Array,
    pub bq: Array,
    pub wk: Array,
    pub bk: Array,
    pub wv: Array,
    pub bv: Array,
    pub wo: Array,
    pub bo: Array,
    pub ln2_gamma: Array,
    pub ln2_beta: Array,
    pub w1: Array,
    pub b1: Array,
    pub w2: Array,
    pub b2: Array,
}

/// All trainable parameters. The *declared order* — the order used by the
/// checkpoint format and the optimizer — is the order of
/// [`ModelParams::param_list`]: token embedding, position embedding, each
/// layer's fields in struct order, final norm, output projection and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tok_emb: Array,
    pub pos_emb: Array,
    pub layers: Vec<LayerParams>,
    pub final_gamma: Array,
    pub final_beta: Array,
    pub out_proj: Array,
    pub out_bias: Array,
}

impl ModelParams {
    /// Random initialization: N(0, 0.02²) weights and embeddings, zero
    /// biases and shifts, unit scales.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut randn = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data: Vec<Real> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            Array::from_vec(shape, data).expect("length matches")
        };
        let (v, d, f, ml) = (cfg.vocab_size, cfg.d_model, cfg.d_ff, cfg.max_len);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_gamma: Array::full(&[d], 1.0),
                ln1_beta: Array::zeros(&[d]),
                wq: randn(&[d, d]),
                bq: Array::zeros(&[d]),
                wk: randn(&[d, d]),
                bk: Array::zeros(&[d]),
                wv: randn(&[d, d]),
                bv: Array::zeros(&[d]),
                wo: randn(&[d, d]),
                bo: Array::zeros(&[d]),
                ln2_gamma: Array::full(&[d], 1.0),
                ln2_beta: Array::zeros(&[d]),
                w1: randn(&[d, f]),
                b1: Array::zeros(&[f]),
                w2: randn(&[f, d]),
                b2: Array::zeros(&[d]),
            })
            .collect();
        Ok(ModelParams {
            tok_emb: randn(&[v, d]),
            pos_emb: randn(&[ml, d]),
            layers,
            final_gamma: Array::full(&[d], 1.0),
            final_beta: Array::zeros(&[d]),
            out_proj: randn(&[d, v]),
            out_bias: Array::zeros(&[v]),
        })
    }

    /// All parameter arrays in declared order.
    pub fn param_list(&self) -> Vec<&Array> {
        let mut list = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            list.extend([
                &l.ln1_gamma,
                &l.ln1_beta,
                &l.wq,
                &l.bq,
                &l.wk,
                &l.bk,
                &l.wv,
                &l.bv,
                &l.wo,
                &l.bo,
                &l.ln2_gamma,
                &l.ln2_beta,
                &l.w1,
                &l.b1,
                &l.w2,
                &l.b2,
            ]);
        }
        list.extend([
            &self.final_gamma,
            &self.final_beta,
            &self.out_proj,
            &self.out_bias,
        ]);
        list
    }

    /// Mutable view in declared order.
    pub fn param_list_mut(&mut self) -> Vec<&mut Array> {
        let mut list = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            list.extend([
                &mut l.ln1_gamma,
                &mut l.ln1_beta,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln2_gamma,
                &mut l.ln2_beta,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        list.extend([
            &mut self.final_gamma,
            &mut self.final_beta,
            &mut self.out_proj,
            &mut self.out_bias,
        ]);
        list
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.param_list().iter().map(|a| a.len()).sum()
    }
}

/// Parameter arrays entered on a tape as leaves, in declared order.
pub struct ParamNodes {
    pub nodes: Vec<NodeId>,
    n_layers: usize,
}

/// Offsets into the declared order.
const HEAD_FIELDS: usize = 2; // tok_emb, pos_emb
const LAYER_FIELDS: usize = 16;

impl ParamNodes {
    /// Enter every parameter as a leaf on the tape.
    pub fn enter(tape: &mut Tape, params: &ModelParams) -> ParamNodes {
        let nodes = params
            .param_list()
            .into_iter()
            .map(|a| tape.leaf(a.clone()))
            .collect();
        ParamNodes {
            nodes,
            n_layers: params.layers.len(),
        }
    }

    fn tok_emb(&self) -> NodeId {
        self.nodes[0]
    }
    fn pos_emb(&self) -> NodeId {
        self.nodes[1]
    }
    fn layer(&self, l: usize, field: usize) -> NodeId {
        debug_assert!(l < self.n_layers && field < LAYER_FIELDS);
        self.nodes[HEAD_FIELDS + l * LAYER_FIELDS + field]
    }
    fn final_gamma(&self) -> NodeId {
        self.nodes[HEAD_FIELDS + self.n_layers * LAYER_FIELDS]
    }
    fn final_beta(&self) -> NodeId {
        self.nodes[HEAD_FIELDS + self.n_layers * LAYER_FIELDS + 1]
    }
    fn out_proj(&self) -> NodeId {
        self.nodes[HEAD_FIELDS + self.n_layers * LAYER_FIELDS + 2]
    }
    fn out_bias(&self) -> NodeId {
        self.nodes[HEAD_FIELDS + self.n_layers * LAYER_FIELDS + 3]
    }
}

/// Dropout control for one forward pass.
pub enum Mode<'r> {
    /// No dropout; deterministic given parameters and input.
    Eval,
    /// Inverted dropout at the configured rate, masks drawn from the RNG.
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    fn dropout(
        &mut self,
        tape: &mut Tape,
        x: NodeId,
        rate: f64,
    ) -> Result<NodeId, TensorError> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train(rng) => {
                if rate == 0.0 {
                    return Ok(x);
                }
                use rand::Rng;
                let n = tape.value(x).len();
                let mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < rate).collect();
                let dropped = tape.masked_fill(x, &mask, 0.0)?;
                Ok(tape.scale(dropped, 1.0 / (1.0 - rate)))
            }
        }
    }
}

/// Logits [len × vocab] for one sequence of context token ids.
///
/// Position t attends to positions ≤ t only; the mask fill of −1e30
/// underflows to an exactly-zero attention weight after softmax.
pub fn forward_sequence(
    tape: &mut Tape,
    nodes: &ParamNodes,
    cfg: &ModelConfig,
    ctx: &[usize],
    mode: &mut Mode,
) -> Result<NodeId, ModelError> {
    let t_len = ctx.len();
    if t_len > cfg.max_len {
        return Err(ModelError::SequenceTooLong {
            len: t_len,
            max: cfg.max_len,
        });
    }
    if let Some(&bad) = ctx.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(ModelError::UnknownTokenId {
            id: bad,
            vocab: cfg.vocab_size,
        });
    }

    let tok = tape.embedding_gather(nodes.tok_emb(), ctx)?;
    let positions: Vec<usize> = (0..t_len).collect();
    let pos = tape.embedding_gather(nodes.pos_emb(), &positions)?;
    let mut x = tape.add(tok, pos)?;

    let d_head = cfg.d_model / cfg.n_heads;
    let scale = 1.0 / (d_head as Real).sqrt();
    // strict causal mask over a [t_len × t_len] score matrix
    let causal: Vec<bool> = (0..t_len)
        .flat_map(|r| (0..t_len).map(move |c| c > r))
        .collect();

    for l in 0..cfg.n_layers {
        let h = tape.layer_norm(x, nodes.layer(l, 0), nodes.layer(l, 1), LN_EPS)?;
        let q = {
            let p = tape.matmul(h, nodes.layer(l, 2))?;
            tape.add(p, nodes.layer(l, 3))?
        };
        let k = {
            let p = tape.matmul(h, nodes.layer(l, 4))?;
            tape.add(p, nodes.layer(l, 5))?
        };
        let v = {
            let p = tape.matmul(h, nodes.layer(l, 6))?;
            tape.add(p, nodes.layer(l, 7))?
        };

        let mut heads = Vec::with_capacity(cfg.n_heads);
        for hd in 0..cfg.n_heads {
            let (lo, hi) = (hd * d_head, (hd + 1) * d_head);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, scale);
            let masked = tape.masked_fill(scaled, &causal, MASK_FILL)?;
            let att = tape.softmax_rows(masked)?;
            heads.push(tape.matmul(att, vh)?);
        }
        let merged = tape.concat_cols(&heads)?;
        let proj = tape.matmul(merged, nodes.layer(l, 8))?;
        let proj = tape.add(proj, nodes.layer(l, 9))?;
        let proj = mode.dropout(tape, proj, cfg.dropout_rate)?;
        x = tape.add(x, proj)?;

        let h2 = tape.layer_norm(x, nodes.layer(l, 10), nodes.layer(l, 11), LN_EPS)?;
        let f1 = tape.matmul(h2, nodes.layer(l, 12))?;
        let f1 = tape.add(f1, nodes.layer(l, 13))?;
        let act = tape.gelu(f1);
        let f2 = tape.matmul(act, nodes.layer(l, 14))?;
        let f2 = tape.add(f2, nodes.layer(l, 15))?;
        let f2 = mode.dropout(tape, f2, cfg.dropout_rate)?;
        x = tape.add(x, f2)?;
    }

    let xn = tape.layer_norm(x, nodes.final_gamma(), nodes.final_beta(), LN_EPS)?;
    let logits = tape.matmul(xn, nodes.out_proj())?;
    Ok(tape.add(logits, nodes.out_bias())?)
}

fn check_framed(seq: &[usize]) -> Result<(), ModelError> {
    if seq.len() < 2 || seq[0] != GO || *seq.last().unwrap() != EOS {
        return Err(ModelError::UnframedSequence);
    }
    Ok(())
}

fn logprob_body(
    tape: &mut Tape,
    nodes: &ParamNodes,
    cfg: &ModelConfig,
    seq: &[usize],
    mode: &mut Mode,
) -> Result<NodeId, ModelError> {
    let ctx = &seq[..seq.len() - 1];
    let targets = &seq[1..];
    let logits = forward_sequence(tape, nodes, cfg, ctx, mode)?;
    let logp = tape.log_softmax_rows(logits)?;
    let picked = tape.pick_entries(logp, targets)?;
    Ok(tape.sum(picked))
}

/// Sum of log P(target | prefix) over one framed sequence, as a tape node.
/// The context is the sequence without its final token; the targets are the
/// sequence without GO.
pub fn sequence_logprob_node(
    tape: &mut Tape,
    nodes: &ParamNodes,
    cfg: &ModelConfig,
    framed: &[usize],
    mode: &mut Mode,
) -> Result<NodeId, ModelError> {
    check_framed(framed)?;
    logprob_body(tape, nodes, cfg, framed, mode)
}

/// Like [`sequence_logprob_node`] but for a GO-prefixed sequence that need
/// not be EOS-terminated — the log-likelihood of a truncated sampling
/// episode's drawn tokens.
pub fn prefix_logprob_node(
    tape: &mut Tape,
    nodes: &ParamNodes,
    cfg: &ModelConfig,
    prefixed: &[usize],
    mode: &mut Mode,
) -> Result<NodeId, ModelError> {
    if prefixed.len() < 2 || prefixed[0] != GO {
        return Err(ModelError::UnframedSequence);
    }
    logprob_body(tape, nodes, cfg, prefixed, mode)
}

/// Batch-mean negative log-likelihood (Eq. 1 objective): mean over
/// sequences of −Σₜ log P(xᵗ | x⁰..xᵗ⁻¹), each sequence at its true length.
pub fn sequence_nll_node(
    tape: &mut Tape,
    nodes: &ParamNodes,
    cfg: &ModelConfig,
    batch: &[Vec<usize>],
    mode: &mut Mode,
) -> Result<NodeId, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::UnframedSequence);
    }
    let mut total: Option<NodeId> = None;
    for framed in batch {
        let lp = sequence_logprob_node(tape, nodes, cfg, framed, mode)?;
        total = Some(match total {
            None => lp,
            Some(t) => tape.add(t, lp)?,
        });
    }
    let total = total.expect("non-empty batch");
    Ok(tape.scale(total, -1.0 / batch.len() as Real))
}

/// Convenience: batch NLL as a plain number (fresh tape, eval mode).
pub fn sequence_nll(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[Vec<usize>],
) -> Result<Real, ModelError> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::enter(&mut tape, params);
    let loss = sequence_nll_node(&mut tape, &nodes, cfg, batch, &mut Mode::Eval)?;
    Ok(tape.value(loss).item())
}

/// Convenience: framed-sequence log-likelihood as a plain number.
pub fn sequence_logprob(
    params: &ModelParams,
    cfg: &ModelConfig,
    framed: &[usize],
) -> Result<Real, ModelError> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::enter(&mut tape, params);
    let lp = sequence_logprob_node(&mut tape, &nodes, cfg, framed, &mut Mode::Eval)?;
    Ok(tape.value(lp).item())
}

/// Logits over the next token given a GO-prefixed context (no EOS framing
/// requirement); used by the sampler. Returns the last row.
pub fn next_token_logits(
    params: &ModelParams,
    cfg: &ModelConfig,
    ctx: &[usize],
) -> Result<Vec<Real>, ModelError> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::enter(&mut tape, params);
    let logits = forward_sequence(&mut tape, &nodes, cfg, ctx, &mut Mode::Eval)?;
    let v = tape.value(logits);
    Ok(v.row(v.rows() - 1).to_vec())
}
