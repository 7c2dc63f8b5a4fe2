use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative sample".into(),
        ));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Macro one-vs-rest AUC over the classes that have both positives and
/// negatives. `scores` is `(n, n_classes)`.
pub fn auc(scores: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    assert_eq!(scores.nrows(), labels.len());
    let mut values = Vec::new();
    for c in 0..scores.ncols() {
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let col: Vec<f64> = scores.column(c).to_vec();
        if let Ok(v) = auc_binary(&col, &pos) {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::UndefinedMetric("AUC needs at least two classes in the labels".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Macro F1 over the classes that occur in `preds` or `labels`. A class that
/// is never predicted, or never present, scores 0.
pub fn f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    assert_eq!(preds.len(), labels.len());
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = preds.iter().chain(labels).copied().max().unwrap_or(0) + 1;
    let mut total = 0.0;
    let mut classes = 0;
    for c in 0..n {
        let tp = preds.iter().zip(labels).filter(|(&p, &l)| p == c && l == c).count() as f64;
        let fp = preds.iter().zip(labels).filter(|(&p, &l)| p == c && l != c).count() as f64;
        let fneg = preds.iter().zip(labels).filter(|(&p, &l)| p != c && l == c).count() as f64;
        if tp + fp + fneg == 0.0 {
            continue;
        }
        classes += 1;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(total / classes as f64)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    assert_eq!(preds.len(), labels.len());
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Row-wise argmax, lowest index on ties.
pub fn argmax_rows(scores: ArrayView2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|r| crate::mixture::argmax(r))
        .collect()
}

/// AUC, macro F1 and accuracy of one prediction set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub acc: Option<f64>,
}

impl Scores {
    pub fn of(probs: ArrayView2<f64>, labels: &[usize]) -> Self {
        let preds = argmax_rows(probs);
        Self {
            auc: auc(probs, labels).ok(),
            f1: f1(&preds, labels).ok(),
            acc: accuracy(&preds, labels).ok(),
        }
    }
}

/// Per-fold values with their mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub folds: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(folds: Vec<f64>) -> Self {
        let n = folds.len();
        let mean = if n == 0 { f64::NAN } else { folds.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            (folds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { folds, mean, std }
    }
}

/// Cross-validated metrics of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: Summary,
    pub f1: Summary,
    pub acc: Summary,
    pub scenario: Option<String>,
    pub config_hash: String,
}
