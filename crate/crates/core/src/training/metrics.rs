use serde::{Deserialize, Serialize};

use crate::data::{Category, LabelSet, Task};
use crate::error::{Error, Result};

/// Fraction of positions where `pred` equals `gold`.
pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Contract(format!("{} predictions for {} labels", pred.len(), gold.len())));
    }
    if gold.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty split".into()));
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiMetrics {
    pub exact_match: f64,
    /// `1 − (1/|D|) Σ |Yᵢ Δ Zᵢ| / 3`
    pub hamming_score: f64,
}

/// Exact-match ratio and Hamming score of predicted label sets `z` against gold `y`.
pub fn evaluate_multi(z: &[LabelSet], y: &[LabelSet]) -> Result<MultiMetrics> {
    if z.len() != y.len() {
        return Err(Error::Contract(format!("{} predictions for {} gold label sets", z.len(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty split".into()));
    }
    let n = y.len() as f64;
    let exact = z.iter().zip(y).filter(|(a, b)| a == b).count() as f64;
    let sym_diff: usize = z.iter().zip(y).map(|(a, b)| a.hamming_distance(*b)).sum();
    let labels = Category::ALL.len() as f64;
    Ok(MultiMetrics {
        exact_match: exact / n,
        hamming_score: 1.0 - sym_diff as f64 / (labels * n),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: Category,
    /// Zero when nothing was predicted positive.
    pub precision: f64,
    /// Zero when no gold positives exist.
    pub recall: f64,
    pub support: usize,
}

pub fn category_stats(category: Category, pred: impl Iterator<Item = bool>, gold: impl Iterator<Item = bool>) -> CategoryStats {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, g) in pred.zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    CategoryStats {
        category,
        precision: ratio(tp, fp),
        recall: ratio(tp, fn_),
        support: tp + fn_,
    }
}

/// Metrics of one model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub examples: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exact_match: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hamming_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold: Option<f64>,
    pub per_category: Vec<CategoryStats>,
}

impl EvalReport {
    /// Accuracy for single-label reports, Hamming score for multi-label ones.
    pub fn primary(&self) -> f64 {
        match self.task {
            Task::Single(_) => self.accuracy.expect("single-label report has accuracy"),
            Task::Multi => self.hamming_score.expect("multi-label report has a Hamming score"),
        }
    }
}
