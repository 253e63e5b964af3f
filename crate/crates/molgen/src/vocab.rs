//! Token vocabulary with reserved control ids.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{tokenize, SmilesError};

/// Reserved id for padding.
pub const PAD: usize = 0;
/// Reserved id for the begin-of-sequence token.
pub const GO: usize = 1;
/// Reserved id for the end-of-sequence token.
pub const EOS: usize = 2;
/// Reserved id for out-of-vocabulary tokens.
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<go>", "<eos>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("line {line}: {source}")]
    Tokenize { line: usize, source: SmilesError },
}

/// Bijective token↔id table. Ids 0..=3 are reserved (PAD, GO, EOS, UNK);
/// observed tokens follow, sorted by token text for reproducibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary over an explicit token set (reserved entries added here).
    pub fn from_observed(observed: impl IntoIterator<Item = String>) -> Self {
        let distinct: BTreeSet<String> = observed
            .into_iter()
            .filter(|t| !RESERVED.contains(&t.as_str()))
            .collect();
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(distinct);
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, ids }
    }

    /// Build from corpus lines; every line must tokenize.
    pub fn build(lines: &[String]) -> Result<Self, VocabError> {
        let mut observed = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            let toks = tokenize(line).map_err(|source| VocabError::Tokenize {
                line: i + 1,
                source,
            })?;
            observed.extend(toks.into_iter().map(|t| t.text));
        }
        Ok(Vocabulary::from_observed(observed))
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Id for a token text; unknown tokens map to [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Encode a SMILES string to unframed token ids.
    pub fn encode(&self, smiles: &str) -> Result<Vec<usize>, SmilesError> {
        Ok(tokenize(smiles)?.iter().map(|t| self.id(&t.text)).collect())
    }

    /// Encode with GO/EOS framing.
    pub fn encode_framed(&self, smiles: &str) -> Result<Vec<usize>, SmilesError> {
        let mut ids = vec![GO];
        ids.extend(self.encode(smiles)?);
        ids.push(EOS);
        Ok(ids)
    }

    /// Decode ids back to a string. PAD/GO/EOS are skipped; UNK renders as
    /// its marker text so it stays visible in output.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id != PAD && id != GO && id != EOS)
            .map(|&id| self.token(id))
            .collect()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, ids }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cco_vocab_is_reserved_plus_observed() {
        let v = Vocabulary::build(&["CCO".to_string()]).unwrap();
        // four reserved control tokens plus distinct observed {C, O}
        assert_eq!(v.size(), 6);
        assert_eq!(v.token(PAD), "<pad>");
        assert_eq!(v.token(GO), "<go>");
        assert_eq!(v.token(EOS), "<eos>");
        assert_eq!(v.token(UNK), "<unk>");
        assert_eq!(&v.tokens()[4..], &["C".to_string(), "O".to_string()]);
    }

    #[test]
    fn two_char_tokens_kept_whole() {
        let v = Vocabulary::build(&["CCl".to_string(), "CBr".to_string()]).unwrap();
        let observed: Vec<&str> = v.tokens()[4..].iter().map(|s| s.as_str()).collect();
        assert_eq!(observed, vec!["Br", "C", "Cl"]);
    }

    #[test]
    fn ordering_is_corpus_order_independent() {
        let a = Vocabulary::build(&["CCO".into(), "CN".into()]).unwrap();
        let b = Vocabulary::build(&["CN".into(), "CCO".into()]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tokenize_error_carries_line_number() {
        let err = Vocabulary::build(&["CCO".into(), "C[nH".into()]).unwrap_err();
        assert!(matches!(err, VocabError::Tokenize { line: 2, .. }));
    }

    #[test]
    fn encode_decode_roundtrip() {
        let v = Vocabulary::build(&["c1cc[nH]c1".to_string()]).unwrap();
        let framed = v.encode_framed("c1cc[nH]c1").unwrap();
        assert_eq!(framed[0], GO);
        assert_eq!(*framed.last().unwrap(), EOS);
        assert_eq!(v.decode(&framed), "c1cc[nH]c1");
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = Vocabulary::build(&["CC".to_string()]).unwrap();
        let ids = v.encode("CN").unwrap();
        assert_eq!(ids, vec![v.id("C"), UNK]);
    }

    #[test]
    fn serde_roundtrip() {
        let v = Vocabulary::build(&["CCO".to_string()]).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.id("C"), v.id("C"));
    }
}
