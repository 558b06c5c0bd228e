//! Agreement metrics between predicted and ground-truth scores.

use serde::Serialize;

use super::ScoringError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementReport {
    pub r2: f64,
    pub spearman: f64,
    pub pearson: f64,
    pub mse: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Average ranks with midrank ties.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson_of(pred: &[f64], gt: &[f64], metric: &'static str) -> Result<f64, ScoringError> {
    let mp = mean(pred);
    let mg = mean(gt);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        sxy += (p - mp) * (g - mg);
        sxx += (p - mp) * (p - mp);
        syy += (g - mg) * (g - mg);
    }
    if sxx == 0.0 {
        return Err(ScoringError::ZeroVariance {
            side: "prediction",
            metric,
        });
    }
    if syy == 0.0 {
        return Err(ScoringError::ZeroVariance {
            side: "ground truth",
            metric,
        });
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// R², Spearman rank correlation (midrank ties), Pearson correlation,
/// and MSE of predictions against ground truth.
pub fn agreement_metrics(pred: &[f64], gt: &[f64]) -> Result<AgreementReport, ScoringError> {
    if pred.len() != gt.len() {
        return Err(ScoringError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if pred.len() < 2 {
        return Err(ScoringError::TooFewSamples {
            needed: 2,
            got: pred.len(),
        });
    }
    let mg = mean(gt);
    let ss_tot: f64 = gt.iter().map(|&g| (g - mg) * (g - mg)).sum();
    if ss_tot == 0.0 {
        return Err(ScoringError::ZeroVariance {
            side: "ground truth",
            metric: "r2",
        });
    }
    let ss_res: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| (g - p) * (g - p))
        .sum();
    let r2 = 1.0 - ss_res / ss_tot;

    let mse = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| (p - g) * (p - g))
        .sum::<f64>()
        / pred.len() as f64;

    let pearson = pearson_of(pred, gt, "pearson")?;
    let spearman = pearson_of(&ranks(pred), &ranks(gt), "spearman")?;

    Ok(AgreementReport {
        r2,
        spearman,
        pearson,
        mse,
    })
}
