//! Benchmark metrics over oracle ledgers: budgeted AUC top-K, diversity of
//! the top-100 molecules, the score-vs-length ablation, and method ranking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::OracleLedger;
use crate::smiles::{fingerprint, parse, tanimoto, Fingerprint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ledger has no entries")]
    EmptyLedger,
    #[error("need at least 2 molecules for diversity, have {have}")]
    TooFewMolecules { have: usize },
    #[error("bad metric parameters: {0}")]
    BadParameters(String),
    #[error("ledger entry {smiles:?} does not parse: {reason}")]
    BadLedgerEntry { smiles: String, reason: String },
}

/// Running top-k average after each call: t(i) = mean of the k highest
/// scores among calls 1..=i (mean of all if fewer than k), carried forward
/// to the budget horizon when the run stopped early.
pub fn running_top_k_curve(
    ledger: &OracleLedger,
    k: usize,
    budget: usize,
) -> Result<Vec<f64>, MetricError> {
    let entries = ledger.entries();
    if entries.is_empty() {
        return Err(MetricError::EmptyLedger);
    }
    if k == 0 {
        return Err(MetricError::BadParameters("k must be >= 1".into()));
    }
    if entries.len() > budget {
        return Err(MetricError::BadParameters(format!(
            "{} ledger entries exceed budget {budget}",
            entries.len()
        )));
    }
    let mut curve = Vec::with_capacity(budget);
    let mut top: Vec<f64> = Vec::with_capacity(k + 1); // ascending
    for e in entries {
        let at = top.partition_point(|&x| x < e.score);
        top.insert(at, e.score);
        if top.len() > k {
            top.remove(0);
        }
        curve.push(top.iter().sum::<f64>() / top.len() as f64);
    }
    let last = *curve.last().expect("nonempty");
    curve.resize(budget, last);
    Ok(curve)
}

/// Exact step-function AUC of the running top-k curve over the budget.
pub fn auc_top_k(ledger: &OracleLedger, k: usize, budget: usize) -> Result<f64, MetricError> {
    let curve = running_top_k_curve(ledger, k, budget)?;
    let mut sum = 0.0;
    for t in &curve {
        sum += t;
    }
    Ok(sum / budget as f64)
}

fn entry_fingerprint(smiles: &str) -> Result<Fingerprint, MetricError> {
    let mol = parse(smiles).map_err(|e| MetricError::BadLedgerEntry {
        smiles: smiles.to_string(),
        reason: e.to_string(),
    })?;
    Ok(fingerprint(&mol))
}

/// Mean pairwise (1 − tanimoto) over the 100 highest-scoring molecules
/// (fewer if the ledger holds fewer). Ledger entries are unique by
/// canonical key by construction.
pub fn diversity_top100(ledger: &OracleLedger) -> Result<f64, MetricError> {
    let mut by_score: Vec<_> = ledger.entries().iter().collect();
    if by_score.len() < 2 {
        return Err(MetricError::TooFewMolecules {
            have: by_score.len(),
        });
    }
    // stable sort: equal scores keep call order, so the selection is
    // deterministic
    by_score.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("scores are finite"));
    by_score.truncate(100);

    let fps: Vec<Fingerprint> = by_score
        .iter()
        .map(|e| entry_fingerprint(&e.smiles))
        .collect::<Result<_, _>>()?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..fps.len() {
        for j in (i + 1)..fps.len() {
            let sim = tanimoto(&fps[i], &fps[j])
                .expect("fingerprints share the default width");
            sum += 1.0 - sim;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// One scored sample for the length ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub smiles: String,
    pub score: f64,
}

/// Statistics of one length bin [lo, lo + bin_width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Score-vs-length summary: per-bin statistics plus the binary short/long
/// split. A side with no samples reports `None` for its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthAblation {
    pub threshold: usize,
    pub bin_width: usize,
    pub bins: Vec<BinStats>,
    pub short_count: usize,
    pub long_count: usize,
    pub short_mean: Option<f64>,
    pub long_mean: Option<f64>,
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Bin scored samples by SMILES string length and split at the threshold.
/// A sample is "long" iff its length is strictly greater than the threshold.
pub fn length_ablation(
    samples: &[ScoredSample],
    threshold: usize,
    bin_width: usize,
) -> LengthAblation {
    let width = bin_width.max(1);
    let mut binned: std::collections::BTreeMap<usize, Vec<f64>> = std::collections::BTreeMap::new();
    let mut short = Vec::new();
    let mut long = Vec::new();
    for s in samples {
        let len = s.smiles.chars().count();
        binned.entry(len / width).or_default().push(s.score);
        if len > threshold {
            long.push(s.score);
        } else {
            short.push(s.score);
        }
    }
    let bins = binned
        .into_iter()
        .map(|(idx, mut scores)| {
            scores.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
            BinStats {
                lo: idx * width,
                hi: (idx + 1) * width,
                count: scores.len(),
                mean: scores.iter().sum::<f64>() / scores.len() as f64,
                q1: quantile(&scores, 0.25),
                median: quantile(&scores, 0.5),
                q3: quantile(&scores, 0.75),
            }
        })
        .collect();
    let mean_of = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    LengthAblation {
        threshold,
        bin_width: width,
        bins,
        short_count: short.len(),
        long_count: long.len(),
        short_mean: mean_of(&short),
        long_mean: mean_of(&long),
    }
}

/// Full metric bundle for one ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub oracle: String,
    pub budget: usize,
    pub n_calls: usize,
    pub auc_top1: f64,
    pub auc_top10: f64,
    pub auc_top100: f64,
    pub final_top1: f64,
    pub final_top10: f64,
    pub final_top100: f64,
    /// None when the ledger holds fewer than 2 molecules.
    pub diversity_top100: Option<f64>,
    pub length: LengthAblation,
}

pub const DEFAULT_LENGTH_THRESHOLD: usize = 50;
pub const DEFAULT_LENGTH_BIN_WIDTH: usize = 10;

/// Compute the standard report: AUC and final running averages for
/// K ∈ {1,10,100}, diversity of the top-100, and the length ablation over
/// the ledger's own molecules.
pub fn report(ledger: &OracleLedger, oracle_name: &str) -> Result<MetricReport, MetricError> {
    let budget = ledger.budget();
    let final_of = |k: usize| -> Result<f64, MetricError> {
        Ok(*running_top_k_curve(ledger, k, budget)?
            .last()
            .expect("budget >= 1"))
    };
    let samples: Vec<ScoredSample> = ledger
        .entries()
        .iter()
        .map(|e| ScoredSample {
            smiles: e.smiles.clone(),
            score: e.score,
        })
        .collect();
    Ok(MetricReport {
        oracle: oracle_name.to_string(),
        budget,
        n_calls: ledger.entries().len(),
        auc_top1: auc_top_k(ledger, 1, budget)?,
        auc_top10: auc_top_k(ledger, 10, budget)?,
        auc_top100: auc_top_k(ledger, 100, budget)?,
        final_top1: final_of(1)?,
        final_top10: final_of(10)?,
        final_top100: final_of(100)?,
        diversity_top100: match diversity_top100(ledger) {
            Ok(d) => Some(d),
            Err(MetricError::TooFewMolecules { .. }) => None,
            Err(e) => return Err(e),
        },
        length: length_ablation(
            &samples,
            DEFAULT_LENGTH_THRESHOLD,
            DEFAULT_LENGTH_BIN_WIDTH,
        ),
    })
}

/// One method's place in the ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub rank: usize,
    pub name: String,
    pub sum_auc_top10: f64,
}

/// Rank methods by the sum of AUC top-10 across their reports, descending;
/// ties break by name.
pub fn rank_methods(methods: &[(String, Vec<MetricReport>)]) -> Vec<MethodRank> {
    let mut rows: Vec<MethodRank> = methods
        .iter()
        .map(|(name, reports)| MethodRank {
            rank: 0,
            name: name.clone(),
            sum_auc_top10: reports.iter().map(|r| r.auc_top10).sum(),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.sum_auc_top10
            .partial_cmp(&a.sum_auc_top10)
            .expect("sums are finite")
            .then_with(|| a.name.cmp(&b.name))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    rows
}
