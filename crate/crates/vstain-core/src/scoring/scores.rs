//! Per-patch clinical score formulas.

use serde::{Deserialize, Serialize};

use super::ScoringError;

/// DAB channel intensity cuts separating the 0 / 1+ / 2+ / 3+ bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DabThresholds {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl Default for DabThresholds {
    fn default() -> Self {
        Self {
            t1: 0.2,
            t2: 0.5,
            t3: 0.8,
        }
    }
}

impl DabThresholds {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.t1 < self.t2 && self.t2 < self.t3 {
            Ok(())
        } else {
            Err(ScoringError::UnorderedThresholds((self.t1, self.t2, self.t3)))
        }
    }
}

/// Nuclei counts per staining-intensity bin plus the H&E-derived total
/// used as the scoring denominator. The bins come from the generated
/// IHC image while `n_total` comes from the source H&E, so the bin sum
/// is not required to match `n_total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NucleiCounts {
    pub n0: u32,
    pub n1: u32,
    pub n2: u32,
    pub n3: u32,
    pub n_total: u32,
}

impl NucleiCounts {
    pub fn positive(&self) -> u32 {
        self.n1 + self.n2 + self.n3
    }

    pub fn binned(&self) -> u32 {
        self.n0 + self.positive()
    }
}

/// Bins DAB intensities into the four levels with half-open intervals:
/// `[0, t1)`, `[t1, t2)`, `[t2, t3)`, `[t3, ∞)`. A value exactly at a
/// threshold lands in the higher bin.
pub fn stratify_nuclei(
    dab_intensities: &[f64],
    thresholds: DabThresholds,
) -> Result<[u32; 4], ScoringError> {
    thresholds.validate()?;
    let mut bins = [0u32; 4];
    for &v in dab_intensities {
        let bin = if v < thresholds.t1 {
            0
        } else if v < thresholds.t2 {
            1
        } else if v < thresholds.t3 {
            2
        } else {
            3
        };
        bins[bin] += 1;
    }
    Ok(bins)
}

/// Mean-intensity to intensity-class mapping, sharing the
/// stratification thresholds.
pub fn intensity_class_of_mean(mean_intensity: f64, thresholds: DabThresholds) -> u8 {
    stratify_nuclei(&[mean_intensity], thresholds)
        .map(|bins| bins.iter().position(|&c| c == 1).unwrap() as u8)
        .unwrap_or(0)
}

/// Weighted staining-intensity score in `[0, 300]`:
/// `sum_i i * (n_i / n_total) * 100` for i in 1..=3.
///
/// The formula is applied literally even when the bins exceed
/// `n_total`; callers flag that condition in reports.
pub fn h_score(counts: &NucleiCounts) -> Result<f64, ScoringError> {
    if counts.n_total == 0 {
        return Err(ScoringError::ZeroTotal);
    }
    let nt = counts.n_total as f64;
    Ok((1.0 * counts.n1 as f64 + 2.0 * counts.n2 as f64 + 3.0 * counts.n3 as f64) / nt * 100.0)
}

/// Allred proportion score, intensity score, and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllredScore {
    pub proportion: u8,
    pub intensity: u8,
    pub total: u8,
}

/// Allred score from the positive fraction and the intensity class.
///
/// Proportion bands (percent): 0 at exactly 0; 1 on (0, 1); 2 on
/// [1, 10]; 3 on [11, 33]; 4 on [34, 66]; 5 at >= 67. Fractional
/// percentages falling in the unmapped gaps (10, 11), (33, 34),
/// (66, 67) are rounded to the nearest whole percent first (half away
/// from zero), which closes the gaps deterministically without
/// reclassifying values inside a defined band.
pub fn allred_score(p_pos: f64, intensity_class: u8) -> Result<AllredScore, ScoringError> {
    if !(0.0..=1.0).contains(&p_pos) || !p_pos.is_finite() {
        return Err(ScoringError::ProportionOutOfRange(p_pos));
    }
    if intensity_class > 3 {
        return Err(ScoringError::InvalidIntensityClass(intensity_class));
    }
    let pct = p_pos * 100.0;
    let proportion = if pct == 0.0 {
        0
    } else if pct < 1.0 {
        1
    } else if pct <= 10.0 {
        2
    } else if pct >= 11.0 && pct <= 33.0 {
        3
    } else if pct >= 34.0 && pct <= 66.0 {
        4
    } else if pct >= 67.0 {
        5
    } else {
        // Gap value: resolve by whole-percent rounding, then re-look-up.
        let rounded = pct.round();
        if rounded <= 10.0 {
            2
        } else if rounded <= 33.0 {
            3
        } else if rounded <= 66.0 {
            4
        } else {
            5
        }
    };
    Ok(AllredScore {
        proportion,
        intensity: intensity_class,
        total: proportion + intensity_class,
    })
}

/// Ki67 positive percentage: all stained bins over the H&E total.
pub fn ki67_positive_pct(counts: &NucleiCounts) -> Result<f64, ScoringError> {
    if counts.n_total == 0 {
        return Err(ScoringError::ZeroTotal);
    }
    Ok(counts.positive() as f64 / counts.n_total as f64)
}

/// HER2 binarization label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Her2Label {
    Negative,
    Positive,
    /// Equivocal 2+ cases, excluded from classification sets.
    EquivocalExcluded,
}

/// Maps a HER2 score to its binary-classification label: 0 and 1+ are
/// negative, 3+ positive, 2+ excluded as equivocal.
pub fn her2_binary_label(score: u8) -> Result<Her2Label, ScoringError> {
    match score {
        0 | 1 => Ok(Her2Label::Negative),
        2 => Ok(Her2Label::EquivocalExcluded),
        3 => Ok(Her2Label::Positive),
        other => Err(ScoringError::InvalidHer2Score(other)),
    }
}
