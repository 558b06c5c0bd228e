//! CSV ingestion and report emission for per-patch scoring.
//!
//! Input: one row per patch with `patch_id, n0, n1, n2, n3, n_total`
//! plus optional ground-truth columns. Output: the same rows extended
//! with every computed score.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::scores::{
    allred_score, h_score, her2_binary_label, ki67_positive_pct, Her2Label, NucleiCounts,
};
use super::ScoringError;

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct PatchRow {
    pub patch_id: String,
    pub n0: u32,
    pub n1: u32,
    pub n2: u32,
    pub n3: u32,
    pub n_total: u32,
    /// Intensity class for the Allred IS component, supplied by the
    /// caller (derived from mean DAB intensity at generation time).
    #[serde(default)]
    pub intensity_class: Option<u8>,
    /// HER2 score 0..=3 when the marker applies.
    #[serde(default)]
    pub her2_score: Option<u8>,
    #[serde(default)]
    pub gt_h_score: Option<f64>,
    #[serde(default)]
    pub gt_ki67_pct: Option<f64>,
}

impl PatchRow {
    pub fn counts(&self) -> NucleiCounts {
        NucleiCounts {
            n0: self.n0,
            n1: self.n1,
            n2: self.n2,
            n3: self.n3,
            n_total: self.n_total,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoredPatch {
    pub patch_id: String,
    pub h_score: f64,
    pub ki67_pct: f64,
    pub allred_ps: u8,
    pub allred_is: u8,
    pub allred_total: u8,
    pub her2_label: String,
    /// Set when the intensity bins exceed the H&E nuclei total; the
    /// formula is still applied literally.
    pub bins_exceed_total: bool,
}

pub fn score_row(row: &PatchRow) -> Result<ScoredPatch, ScoringError> {
    let counts = row.counts();
    let h = h_score(&counts)?;
    let ki67 = ki67_positive_pct(&counts)?;
    let allred = allred_score(ki67.min(1.0), row.intensity_class.unwrap_or(0))?;
    let her2 = match row.her2_score {
        Some(s) => match her2_binary_label(s)? {
            Her2Label::Negative => "negative",
            Her2Label::Positive => "positive",
            Her2Label::EquivocalExcluded => "equivocal-excluded",
        },
        None => "",
    };
    Ok(ScoredPatch {
        patch_id: row.patch_id.clone(),
        h_score: h,
        ki67_pct: ki67,
        allred_ps: allred.proportion,
        allred_is: allred.intensity,
        allred_total: allred.total,
        her2_label: her2.to_string(),
        bins_exceed_total: counts.binned() > counts.n_total,
    })
}

pub fn read_patch_rows<R: Read>(reader: R) -> Result<Vec<PatchRow>, ScoringError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<PatchRow>() {
        rows.push(rec.map_err(|e| ScoringError::Csv(e.to_string()))?);
    }
    Ok(rows)
}

pub fn write_score_report<W: Write>(
    writer: W,
    scored: &[ScoredPatch],
) -> Result<(), ScoringError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for s in scored {
        wtr.serialize(s)
            .map_err(|e| ScoringError::Csv(e.to_string()))?;
    }
    wtr.flush().map_err(|e| ScoringError::Csv(e.to_string()))
}
