//! Scoring oracles with budget accounting, caching, and an append-only
//! ledger.
//!
//! `score` is pure: it maps a parsed molecule to [0,1]. `score_budgeted`
//! wraps it with the call-budget bookkeeping used by fine-tuning and
//! evaluation: invalid SMILES score 0 without consuming budget, repeat
//! molecules (by canonical key) are served from the cache without a ledger
//! entry, and each genuinely new molecule costs exactly one call.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{canonical_key, fingerprint, parse, tanimoto, MolGraph};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("unknown oracle {name:?}; known: {known}", known = builtin_names().join(", "))]
    UnknownOracle { name: String },
    #[error("bad oracle parameters: {0}")]
    BadParameters(String),
    #[error("oracle budget of {budget} calls exhausted")]
    BudgetExhausted { budget: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed ledger file: {0}")]
    MalformedLedger(String),
}

/// Kind-specific oracle parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleParams {
    /// Tanimoto similarity of path fingerprints against a query molecule.
    Similarity { query: String },
    /// 1.0 on an exact element-multiset match (implicit hydrogens count),
    /// exp(−L1 distance of element counts) otherwise.
    Isomer { formula: String },
    /// 1 − |rings − target| / max(target, 1), clamped to [0,1].
    RingCount { target: usize },
    /// 1.0 iff the molecule contains at least one ring.
    RingPresence,
    /// 1.0 for a heavy-atom count within [lo, hi]; linear falloff to 0
    /// over `width` atoms outside the window.
    LengthWindow { lo: usize, hi: usize, width: usize },
    /// Weighted geometric mean of component scores (0 if any is 0).
    MpoProduct { components: Vec<MpoComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpoComponent {
    pub name: String,
    pub weight: f64,
    pub params: Box<OracleParams>,
}

/// A named scoring function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub name: String,
    pub params: OracleParams,
}

impl OracleSpec {
    /// Reject parameter sets that can never score a molecule.
    pub fn validate(&self) -> Result<(), OracleError> {
        validate_params(&self.params)
    }
}

fn validate_params(params: &OracleParams) -> Result<(), OracleError> {
    let bad = |msg: String| Err(OracleError::BadParameters(msg));
    match params {
        OracleParams::Similarity { query } => match parse(query) {
            Ok(_) => Ok(()),
            Err(e) => bad(format!("similarity query {query:?} does not parse: {e}")),
        },
        OracleParams::Isomer { formula } => parse_formula(formula).map(|_| ()),
        OracleParams::RingCount { .. } | OracleParams::RingPresence => Ok(()),
        OracleParams::LengthWindow { lo, hi, width } => {
            if lo > hi {
                return bad(format!("length window lo {lo} > hi {hi}"));
            }
            if *width == 0 {
                return bad("length window width must be >= 1".into());
            }
            Ok(())
        }
        OracleParams::MpoProduct { components } => {
            if components.is_empty() {
                return bad("mpo_product needs at least one component".into());
            }
            for c in components {
                if !(c.weight > 0.0) {
                    return bad(format!("component {:?} weight must be > 0", c.name));
                }
                validate_params(&c.params)?;
            }
            Ok(())
        }
    }
}

/// Parse a molecular formula like "C2H6O" into element counts.
fn parse_formula(formula: &str) -> Result<BTreeMap<String, u32>, OracleError> {
    let bad = || OracleError::BadParameters(format!("malformed formula {formula:?}"));
    let chars: Vec<char> = formula.chars().collect();
    let mut counts = BTreeMap::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_uppercase() {
            return Err(bad());
        }
        let mut element = chars[i].to_string();
        i += 1;
        while i < chars.len() && chars[i].is_ascii_lowercase() {
            element.push(chars[i]);
            i += 1;
        }
        let mut count = 0u32;
        let digits_start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            count = count
                .checked_mul(10)
                .and_then(|c| c.checked_add(chars[i] as u32 - '0' as u32))
                .ok_or_else(bad)?;
            i += 1;
        }
        if i == digits_start {
            count = 1;
        } else if count == 0 {
            return Err(bad());
        }
        *counts.entry(element).or_insert(0) += count;
    }
    if counts.is_empty() {
        return Err(bad());
    }
    Ok(counts)
}

/// Score a molecule in [0,1] under the given oracle.
pub fn score(spec: &OracleSpec, mol: &MolGraph) -> Result<f64, OracleError> {
    score_params(&spec.params, mol)
}

fn score_params(params: &OracleParams, mol: &MolGraph) -> Result<f64, OracleError> {
    match params {
        OracleParams::Similarity { query } => {
            let q = parse(query).map_err(|e| {
                OracleError::BadParameters(format!("similarity query {query:?}: {e}"))
            })?;
            // same default width on both sides, so the mismatch arm is unreachable
            tanimoto(&fingerprint(mol), &fingerprint(&q))
                .map_err(|e| OracleError::BadParameters(e.to_string()))
        }
        OracleParams::Isomer { formula } => {
            let target = parse_formula(formula)?;
            let have = mol.element_counts();
            let keys: std::collections::BTreeSet<&String> =
                target.keys().chain(have.keys()).collect();
            let mut l1 = 0u32;
            for key in keys {
                let a = *target.get(key).unwrap_or(&0);
                let b = *have.get(key).unwrap_or(&0);
                l1 += a.abs_diff(b);
            }
            Ok(if l1 == 0 { 1.0 } else { (-f64::from(l1)).exp() })
        }
        OracleParams::RingCount { target } => {
            let rings = mol.ring_count();
            let miss = rings.abs_diff(*target) as f64;
            Ok((1.0 - miss / (*target).max(1) as f64).clamp(0.0, 1.0))
        }
        OracleParams::RingPresence => Ok(if mol.ring_count() >= 1 { 1.0 } else { 0.0 }),
        OracleParams::LengthWindow { lo, hi, width } => {
            let n = mol.heavy_atom_count();
            let dist = if n < *lo {
                lo - n
            } else if n > *hi {
                n - hi
            } else {
                0
            };
            Ok((1.0 - dist as f64 / *width as f64).clamp(0.0, 1.0))
        }
        OracleParams::MpoProduct { components } => {
            let mut log_sum = 0.0;
            let mut weight_sum = 0.0;
            for c in components {
                let s = score_params(&c.params, mol)?;
                if s == 0.0 {
                    return Ok(0.0);
                }
                log_sum += c.weight * s.ln();
                weight_sum += c.weight;
            }
            Ok((log_sum / weight_sum).exp().clamp(0.0, 1.0))
        }
    }
}

/// One budget-consuming oracle call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub call: usize,
    pub key: String,
    pub smiles: String,
    pub score: f64,
}

/// Header line of a ledger file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LedgerHeader {
    oracle: String,
    budget: usize,
    params: OracleParams,
}

/// Budgeted call record: ordered entries, a canonical-key cache, and the
/// remaining-call arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleLedger {
    oracle: String,
    params: OracleParams,
    budget: usize,
    entries: Vec<LedgerEntry>,
    cache: HashMap<String, f64>,
}

impl OracleLedger {
    pub fn new(spec: &OracleSpec, budget: usize) -> OracleLedger {
        OracleLedger {
            oracle: spec.name.clone(),
            params: spec.params.clone(),
            budget,
            entries: Vec::new(),
            cache: HashMap::new(),
        }
    }

    pub fn oracle(&self) -> &str {
        &self.oracle
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.entries.len()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Cached score for a canonical key, if that molecule was ever charged.
    pub fn cached(&self, key: &str) -> Option<f64> {
        self.cache.get(key).copied()
    }

    /// Score a SMILES string against the budget. Invalid strings score 0
    /// with no entry and no budget use; cached molecules return their score
    /// without a new entry; new molecules cost one call.
    pub fn score_budgeted(
        &mut self,
        spec: &OracleSpec,
        smiles: &str,
    ) -> Result<f64, OracleError> {
        let Ok(mol) = parse(smiles) else {
            return Ok(0.0);
        };
        let key = canonical_key(&mol);
        if let Some(&cached) = self.cache.get(&key) {
            return Ok(cached);
        }
        if self.entries.len() >= self.budget {
            return Err(OracleError::BudgetExhausted {
                budget: self.budget,
            });
        }
        let s = score(spec, &mol)?;
        self.entries.push(LedgerEntry {
            call: self.entries.len() + 1,
            key: key.clone(),
            smiles: smiles.to_string(),
            score: s,
        });
        self.cache.insert(key, s);
        Ok(s)
    }

    /// Serialize as JSONL: one header line, then one line per entry.
    pub fn to_jsonl(&self) -> String {
        let header = LedgerHeader {
            oracle: self.oracle.clone(),
            budget: self.budget,
            params: self.params.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), OracleError> {
        fs::write(path, self.to_jsonl()).map_err(|source| OracleError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<OracleLedger, OracleError> {
        let text = fs::read_to_string(path).map_err(|source| OracleError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    pub fn from_jsonl(text: &str) -> Result<OracleLedger, OracleError> {
        let bad = |msg: String| OracleError::MalformedLedger(msg);
        let mut lines = text.lines();
        let header_line = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let header: LedgerHeader = serde_json::from_str(header_line)
            .map_err(|e| bad(format!("header line: {e}")))?;
        let mut ledger = OracleLedger {
            oracle: header.oracle,
            params: header.params,
            budget: header.budget,
            entries: Vec::new(),
            cache: HashMap::new(),
        };
        for (i, line) in lines.enumerate() {
            let entry: LedgerEntry = serde_json::from_str(line)
                .map_err(|e| bad(format!("entry line {}: {e}", i + 2)))?;
            if entry.call != ledger.entries.len() + 1 {
                return Err(bad(format!(
                    "call index {} at position {}",
                    entry.call,
                    ledger.entries.len() + 1
                )));
            }
            ledger.cache.insert(entry.key.clone(), entry.score);
            ledger.entries.push(entry);
        }
        if ledger.entries.len() > ledger.budget {
            return Err(bad(format!(
                "{} entries exceed budget {}",
                ledger.entries.len(),
                ledger.budget
            )));
        }
        Ok(ledger)
    }
}

/// Names accepted by [`lookup`].
pub fn builtin_names() -> Vec<&'static str> {
    vec![
        "ring_presence",
        "ring_count_1",
        "ring_count_2",
        "isomer_c2h6o",
        "length_8_12",
        "similarity_aspirin",
        "mpo_ring_length",
    ]
}

/// Resolve a built-in oracle by name.
pub fn lookup(name: &str) -> Result<OracleSpec, OracleError> {
    let length_8_12 = OracleParams::LengthWindow {
        lo: 8,
        hi: 12,
        width: 4,
    };
    let params = match name {
        "ring_presence" => OracleParams::RingPresence,
        "ring_count_1" => OracleParams::RingCount { target: 1 },
        "ring_count_2" => OracleParams::RingCount { target: 2 },
        "isomer_c2h6o" => OracleParams::Isomer {
            formula: "C2H6O".into(),
        },
        "length_8_12" => length_8_12,
        "similarity_aspirin" => OracleParams::Similarity {
            query: "CC(=O)Oc1ccccc1C(=O)O".into(),
        },
        "mpo_ring_length" => OracleParams::MpoProduct {
            components: vec![
                MpoComponent {
                    name: "ring_presence".into(),
                    weight: 1.0,
                    params: Box::new(OracleParams::RingPresence),
                },
                MpoComponent {
                    name: "length_8_12".into(),
                    weight: 1.0,
                    params: Box::new(length_8_12),
                },
            ],
        },
        _ => {
            return Err(OracleError::UnknownOracle {
                name: name.to_string(),
            })
        }
    };
    Ok(OracleSpec {
        name: name.to_string(),
        params,
    })
}
