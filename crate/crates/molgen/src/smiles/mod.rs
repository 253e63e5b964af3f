//! SMILES handling: tokenization, parsing, validity, fingerprints, and
//! canonical dedup keys.
//!
//! The supported subset covers the organic subset atoms, bracket atoms with
//! charge and explicit hydrogen counts, bond symbols `- = # : / \`, ring
//! closure digits (including `%nn`), and branches. Stereo markers are
//! tokenized but carry no semantics. All functions here are pure.

mod canon;
mod corpus;
mod fingerprint;
mod graph;
mod parser;
mod token;

pub use canon::canonical_key;
pub use corpus::{load_corpus, parse_corpus};
pub use fingerprint::{fingerprint, fingerprint_with_width, tanimoto, Fingerprint, DEFAULT_FP_WIDTH};
pub use graph::{
    allowed_valences, charged_valences, implicit_hydrogens, valence_violation, Atom, Bond,
    BondOrder, MolGraph,
};
pub use parser::{is_valid, parse};
pub use token::{detokenize, tokenize, Token, TokenKind};

use thiserror::Error;

/// Errors produced by the SMILES layer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("unterminated bracket atom starting at byte {pos}")]
    UnterminatedBracket { pos: usize },
    #[error("ring closure digit {digit} never paired")]
    UnmatchedRingClosure { digit: u32 },
    #[error("unbalanced branch parentheses")]
    UnbalancedBranch,
    #[error("valence exceeded at atom {atom}")]
    ValenceExceeded { atom: usize },
    #[error("malformed bracket atom {text:?}")]
    BadBracketAtom { text: String },
    #[error("unexpected token {text:?} at index {index}")]
    UnexpectedToken { index: usize, text: String },
    #[error("duplicate bond between atoms {a} and {b}")]
    DuplicateBond { a: usize, b: usize },
    #[error("ring closure bonds atom {atom} to itself")]
    RingSelfBond { atom: usize },
    #[error("empty SMILES string")]
    EmptyInput,
    #[error("fingerprint widths differ: {a} vs {b}")]
    WidthMismatch { a: usize, b: usize },
}
