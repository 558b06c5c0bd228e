//! Binary classification metrics with a rank-based AUC.

use serde::Serialize;

use super::ScoringError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub acc: f64,
    pub auc: f64,
    pub f1: f64,
    pub kappa: f64,
}

/// Mann-Whitney AUC from average ranks, which handles ties by midrank
/// correction (a tied positive/negative pair counts one half).
fn auc_rank(scores: &[f64], labels: &[bool]) -> Result<f64, ScoringError> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ScoringError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ACC, AUC, F1, and Cohen's kappa of `scores` against binary labels.
/// Hard decisions use the 0.5 threshold.
pub fn classification_metrics(
    scores: &[f64],
    labels: &[bool],
) -> Result<ClassificationReport, ScoringError> {
    if scores.len() != labels.len() {
        return Err(ScoringError::LengthMismatch {
            pred: scores.len(),
            gt: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(ScoringError::TooFewSamples { needed: 1, got: 0 });
    }
    let auc = auc_rank(scores, labels)?;

    let (mut tp, mut tn, mut fp, mut fne) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= 0.5;
        match (pred, l) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fne += 1.0,
        }
    }
    let n = scores.len() as f64;
    let acc = (tp + tn) / n;
    let f1 = if 2.0 * tp + fp + fne == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fne)
    };
    // Cohen's kappa from the 2x2 confusion table.
    let p_yes_pred = (tp + fp) / n;
    let p_yes_true = (tp + fne) / n;
    let pe = p_yes_pred * p_yes_true + (1.0 - p_yes_pred) * (1.0 - p_yes_true);
    let kappa = if (1.0 - pe).abs() < f64::EPSILON {
        1.0
    } else {
        (acc - pe) / (1.0 - pe)
    };

    Ok(ClassificationReport { acc, auc, f1, kappa })
}
