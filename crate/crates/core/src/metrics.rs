//! Multiclass classification metrics.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the ROC-AUC column is averaged; recorded in every report.
pub const AUC_AVERAGING: &str = "macro one-vs-rest over classes with both positives and negatives";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true examples of this class.
    pub support: u64,
    /// Set when precision had a zero denominator and was reported as 0.
    pub precision_undefined: bool,
    /// Set when recall had a zero denominator and was reported as 0.
    pub recall_undefined: bool,
    /// One-vs-rest AUC, absent when the class has no positives or no negatives.
    pub roc_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub examples: u64,
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub f1_macro: f64,
    /// `None` when no class qualifies for a one-vs-rest curve.
    pub roc_auc_macro: Option<f64>,
    pub roc_auc_averaging: String,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Metrics for `num_classes` classes. `probabilities` supplies the score
/// of every class for every example (rows normally sum to 1).
pub fn compute(
    true_labels: &[usize],
    predicted: &[usize],
    probabilities: ArrayView2<'_, f64>,
    num_classes: usize,
) -> Result<MetricsReport> {
    let n = true_labels.len();
    if predicted.len() != n || probabilities.nrows() != n {
        return Err(Error::LengthMismatch(format!(
            "{n} labels, {} predictions, {} probability rows",
            predicted.len(),
            probabilities.nrows()
        )));
    }
    if probabilities.ncols() != num_classes {
        return Err(Error::LengthMismatch(format!(
            "{} probability columns for {num_classes} classes",
            probabilities.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = true_labels.iter().chain(predicted).find(|&&c| c >= num_classes) {
        return Err(Error::LengthMismatch(format!("class index {bad} >= {num_classes}")));
    }

    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in true_labels.iter().zip(predicted) {
        confusion[t][p] += 1;
    }

    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted_c: u64 = confusion.iter().map(|row| row[c]).sum();
        let (precision, precision_undefined) = ratio(tp, predicted_c);
        let (recall, recall_undefined) = ratio(tp, support);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        let scores: Vec<f64> = probabilities.column(c).to_vec();
        let positives: Vec<bool> = true_labels.iter().map(|&t| t == c).collect();
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
            precision_undefined,
            recall_undefined,
            roc_auc: binary_auc(&scores, &positives),
        });
    }

    let total = n as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total;
    let trace: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
    let aucs: Vec<f64> = per_class.iter().filter_map(|m| m.roc_auc).collect();

    Ok(MetricsReport {
        examples: n as u64,
        accuracy: trace as f64 / total,
        precision_weighted: weighted(|m| m.precision),
        recall_weighted: weighted(|m| m.recall),
        f1_weighted: weighted(|m| m.f1),
        f1_macro: per_class.iter().map(|m| m.f1).sum::<f64>() / num_classes as f64,
        roc_auc_macro: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        roc_auc_averaging: AUC_AVERAGING.to_string(),
        confusion,
        per_class,
    })
}

/// Mann-Whitney AUC with midranks for tied scores.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let p = n_pos as f64;
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}
