//! Clinical scoring: DAB intensity stratification, H-Score, Allred
//! proportion/intensity scores, Ki67 positive percentage, HER2
//! binarization, and the agreement / classification metrics used to
//! compare predicted scores against ground truth.

mod agreement;
mod classification;
mod csv_io;
mod scores;

pub use agreement::{agreement_metrics, AgreementReport};
pub use classification::{classification_metrics, ClassificationReport};
pub use csv_io::{read_patch_rows, score_row, write_score_report, PatchRow, ScoredPatch};
pub use scores::{
    allred_score, h_score, her2_binary_label, intensity_class_of_mean, ki67_positive_pct,
    stratify_nuclei, AllredScore, DabThresholds, Her2Label, NucleiCounts,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("intensity thresholds must be strictly increasing: {0:?}")]
    UnorderedThresholds((f64, f64, f64)),
    #[error("no nuclei detected: n_total must be at least 1")]
    ZeroTotal,
    #[error("positive proportion {0} outside [0, 1]")]
    ProportionOutOfRange(f64),
    #[error("invalid HER2 score {0}, expected 0..=3")]
    InvalidHer2Score(u8),
    #[error("invalid intensity class {0}, expected 0..=3")]
    InvalidIntensityClass(u8),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("prediction and ground-truth lengths differ: {pred} vs {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("{side} has zero variance; {metric} undefined")]
    ZeroVariance {
        side: &'static str,
        metric: &'static str,
    },
    #[error("AUC undefined: only one class present")]
    SingleClass,
    #[error("csv: {0}")]
    Csv(String),
}
