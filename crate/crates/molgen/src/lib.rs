//! Molecular sequence generation toolkit.
//!
//! The pipeline: tokenize and parse SMILES ([`smiles`]), train a
//! decoder-only transformer prior by maximum likelihood ([`pretrain`]),
//! sample molecules from it ([`sample`]), fine-tune the sampler against a
//! scoring oracle under a call budget ([`rl`], [`oracle`]), and evaluate
//! runs with budget-normalized metrics ([`metrics`]).
//!
//! The numeric core ([`tensor`]) is generic over the scalar type; the
//! model and training code use the concrete [`Real`] alias.

pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pretrain;
pub mod rl;
pub mod sample;
pub mod seeds;
pub mod smiles;
pub mod tensor;
pub mod vocab;

/// Scalar type used by the model and training pipeline.
pub type Real = f64;

/// Dense array over [`Real`].
pub type Array = tensor::NDArray<Real>;

/// Recording tape over [`Real`].
pub type Tape = tensor::Tape<Real>;

/// Optimizer state over [`Real`].
pub type AdamState = tensor::AdamState<Real>;
