//! Classification metrics: accuracy, balanced accuracy, confusion matrix,
//! and rank-based AUROC.

use super::class_partition;
use crate::{Error, Result};

/// Hard-label classification metrics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Mean per-class recall over the classes present in the truth.
    pub balanced_accuracy: f64,
    /// Rows = true class, columns = predicted class, both ordered by
    /// `classes`.
    pub confusion_matrix: Vec<Vec<usize>>,
    /// Class codes indexing the confusion matrix, ascending.
    pub classes: Vec<f64>,
}

/// Compare hard predictions against the truth.
pub fn classification_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::DimMismatch {
            context: "metrics",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput { what: "labels" });
    }
    let mut all: Vec<f64> = truth.iter().chain(pred).copied().collect();
    if all.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter {
            name: "labels",
            reason: "NaN label code".into(),
        });
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    let classes = all;
    let index = |code: f64| classes.iter().position(|&c| c == code).unwrap();
    let k = classes.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[index(t)][index(p)] += 1;
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let accuracy = correct as f64 / truth.len() as f64;
    let mut recalls = Vec::new();
    for i in 0..k {
        let row_total: usize = confusion[i].iter().sum();
        if row_total > 0 {
            recalls.push(confusion[i][i] as f64 / row_total as f64);
        }
    }
    let balanced_accuracy = recalls.iter().sum::<f64>() / recalls.len() as f64;
    Ok(Metrics {
        accuracy,
        balanced_accuracy,
        confusion_matrix: confusion,
        classes,
    })
}

/// Area under the ROC curve by the Mann-Whitney rank statistic, counting
/// ties as one half. The class with the higher code is "positive".
pub fn auroc(scores: &[f64], truth: &[f64]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::DimMismatch {
            context: "auroc",
            expected: truth.len(),
            got: scores.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput { what: "labels" });
    }
    let parts = class_partition(truth)?;
    if parts.len() == 1 {
        return Err(Error::SingleClass { op: "auroc" });
    }
    if parts.len() != 2 {
        return Err(Error::NotBinary {
            op: "auroc",
            found: parts.len(),
        });
    }
    let positive = parts[1].0;
    let n_pos = parts[1].1.len() as f64;
    let n_neg = parts[0].1.len() as f64;
    // Midranks: sort indices by score, average over tie runs.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; a tie run spanning ranks i+1..=j+1 averages to
        // a half-integer, which f64 represents exactly.
        let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = truth
        .iter()
        .zip(&ranks)
        .filter(|(&t, _)| t == positive)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}
