//! Accuracy, cumulative-split AUCs and the Obuchowski index.
//!
//! AUCs rank samples by a scalar score: the sum of the ordinal bit
//! probabilities. They are computed from sorted scores with integer win/tie
//! counts, so replicating samples leaves every AUC exactly unchanged.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ordinal::{decode, DecodeRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub truth: usize,
    pub predicted: usize,
    pub score: f64,
}

impl ScoredPrediction {
    /// Decodes per-bit probabilities and scores them by their sum.
    pub fn from_probs(truth: usize, probs: &[f64]) -> Self {
        Self::from_probs_with(truth, probs, DecodeRule::HighestPositive)
    }

    pub fn from_probs_with(truth: usize, probs: &[f64], rule: DecodeRule) -> Self {
        Self {
            truth,
            predicted: crate::ordinal::decode_with(probs, rule),
            score: probs.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// `None` where one side of the split is empty.
    pub split_aucs: Vec<Option<f64>>,
    pub mean_auc: f64,
    pub obuchowski: f64,
    pub n: usize,
    pub classes: usize,
}

pub fn accuracy(preds: &[ScoredPrediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    let hits = preds.iter().filter(|p| p.truth == p.predicted).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `P(pos > neg) + ½ P(pos = neg)`; `None` if either group is empty.
pub fn binary_auc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the Mann-Whitney U statistic, kept in integers. `==` ties -0.0 with 0.0.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_u += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    let pairs = 2 * pos.len() as u128 * neg.len() as u128;
    Some(twice_u as f64 / pairs as f64)
}

/// AUC of classes `<= i` against `> i` for `i = 1..K-1`, plus the mean over
/// splits where both sides are present.
pub fn split_aucs(preds: &[ScoredPrediction], classes: usize) -> Result<(Vec<Option<f64>>, f64)> {
    if preds.is_empty() {
        return Err(Error::invalid("split AUCs of an empty prediction set"));
    }
    let splits: Vec<Option<f64>> = (1..classes)
        .map(|i| {
            let (pos, neg): (Vec<&ScoredPrediction>, Vec<&ScoredPrediction>) =
                preds.iter().partition(|p| p.truth > i);
            let pos: Vec<f64> = pos.iter().map(|p| p.score).collect();
            let neg: Vec<f64> = neg.iter().map(|p| p.score).collect();
            binary_auc(&pos, &neg)
        })
        .collect();
    let present: Vec<f64> = splits.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::invalid("no split has both groups present"));
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok((splits, mean))
}

/// Unweighted mean over class pairs `s < t` of `P(score_t > score_s)`.
pub fn obuchowski(preds: &[ScoredPrediction], classes: usize) -> Result<f64> {
    let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); classes];
    for p in preds {
        if p.truth == 0 || p.truth > classes {
            return Err(Error::invalid(format!("label {} outside 1..={classes}", p.truth)));
        }
        by_class[p.truth - 1].push(p.score);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for s in 0..classes {
        for t in s + 1..classes {
            if let Some(auc) = binary_auc(&by_class[t], &by_class[s]) {
                total += auc;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::invalid(
            "the Obuchowski index needs at least two classes present",
        ));
    }
    Ok(total / pairs as f64)
}

pub fn evaluate(preds: &[ScoredPrediction], classes: usize) -> Result<MetricsReport> {
    let (split_aucs, mean_auc) = split_aucs(preds, classes)?;
    Ok(MetricsReport {
        accuracy: accuracy(preds)?,
        split_aucs,
        mean_auc,
        obuchowski: obuchowski(preds, classes)?,
        n: preds.len(),
        classes,
    })
}

/// Scores each row of `probs` (`[n, K-1]`, row-major) against `labels`.
pub fn score_rows(probs: &[f64], labels: &[usize], bits: usize) -> Vec<ScoredPrediction> {
    probs
        .chunks(bits)
        .zip(labels)
        .map(|(row, &y)| ScoredPrediction {
            truth: y,
            predicted: decode(row),
            score: row.iter().sum(),
        })
        .collect()
}

/// One row of a long-format experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub test_set: String,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub accuracy: f64,
    pub mean_auc: f64,
    pub obuchowski: f64,
    pub n: usize,
    /// Aggregation weights joined with `;`, empty for single-head variants.
    pub weights: String,
}

impl MetricsRow {
    pub fn new(method: &str, test_set: &str, seed: u64, lambda: Option<f64>, report: &MetricsReport, weights: &[f64]) -> Self {
        Self {
            method: method.to_string(),
            test_set: test_set.to_string(),
            seed,
            lambda,
            accuracy: report.accuracy,
            mean_auc: report.mean_auc,
            obuchowski: report.obuchowski,
            n: report.n,
            weights: weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";"),
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
