//! Paired image synthesis with ground truth.
//!
//! Nuclei are elliptical blobs. Their staining intensity is assigned
//! per *cluster*, not from local appearance: two nuclei that look the
//! same in the H&E rendering can carry different expression levels, so
//! translation from morphology alone is genuinely underdetermined and
//! structural conditioning has signal.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Image;
use crate::scalar::Scalar;
use crate::scoring::{intensity_class_of_mean, stratify_nuclei, DabThresholds, NucleiCounts};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenParams {
    pub n_nuclei: usize,
    pub image_size: usize,
    pub positivity_rate: f64,
    pub texture_scale: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n_nuclei: 24,
            image_size: 64,
            positivity_rate: 0.5,
            texture_scale: 1.0,
        }
    }
}

/// One paired sample with exact ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticPair<T: Scalar> {
    pub x_he: Image<T>,
    pub x_ihc: Image<T>,
    /// Per-pixel expression level in [0, 1].
    pub molecular_map: Array2<f64>,
    /// Per-nucleus DAB intensity, the stratification input.
    pub dab_intensities: Vec<f64>,
    pub counts: NucleiCounts,
    /// Allred intensity class from the mean intensity of positive
    /// nuclei (0 when none are positive).
    pub intensity_class: u8,
    pub seed: u64,
}

struct Nucleus {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    theta: f64,
    dab: f64,
}

impl Nucleus {
    /// Soft coverage in [0, 1]: 1 well inside the ellipse, 0 outside,
    /// with a half-pixel feather.
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let (s, c) = self.theta.sin_cos();
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        let r = (u * u + v * v).sqrt();
        let edge = 0.5 / self.rx.min(self.ry);
        ((1.0 - r) / edge * 0.5 + 0.5).clamp(0.0, 1.0)
    }
}

const HE_BACKGROUND: [f64; 3] = [0.93, 0.80, 0.86];
const HE_NUCLEUS: [f64; 3] = [0.38, 0.28, 0.56];
const IHC_BACKGROUND: [f64; 3] = [0.91, 0.91, 0.94];
const IHC_COUNTERSTAIN: [f64; 3] = [0.62, 0.66, 0.82];
const DAB_BROWN: [f64; 3] = [0.42, 0.26, 0.10];

/// Fixed monotone map from expression to DAB mixing weight.
fn dab_mix(expression: f64) -> f64 {
    expression.clamp(0.0, 1.0)
}

/// Deterministic synthesis of one registered pair.
pub fn generate_pair<T: Scalar>(seed: u64, params: &GenParams) -> SyntheticPair<T> {
    assert!(
        params.image_size % 16 == 0,
        "image_size must be a multiple of 16"
    );
    let s = params.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = s as f64 / 64.0;

    // Cluster layout: each cluster carries one expression level.
    let n_clusters = (2 + params.n_nuclei / 8).min(6).max(1);
    let clusters: Vec<(f64, f64, f64)> = (0..n_clusters)
        .map(|_| {
            let cy = rng.random_range(0.15..0.85) * s as f64;
            let cx = rng.random_range(0.15..0.85) * s as f64;
            let expr = if rng.random::<f64>() < params.positivity_rate {
                rng.random_range(0.35..1.0)
            } else {
                0.0
            };
            (cy, cx, expr)
        })
        .collect();

    let mut nuclei = Vec::with_capacity(params.n_nuclei);
    let mut dab_intensities = Vec::with_capacity(params.n_nuclei);
    for _ in 0..params.n_nuclei {
        let cluster = &clusters[rng.random_range(0..n_clusters)];
        let cy = (cluster.0 + rng.random_range(-7.0..7.0) * scale)
            .clamp(2.0, s as f64 - 3.0);
        let cx = (cluster.1 + rng.random_range(-7.0..7.0) * scale)
            .clamp(2.0, s as f64 - 3.0);
        let ry = rng.random_range(2.2..4.2) * scale;
        let rx = rng.random_range(2.2..4.2) * scale;
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        // Per-nucleus jitter stays well below the first threshold for
        // negative clusters.
        let dab = if cluster.2 == 0.0 {
            rng.random_range(0.0..0.05)
        } else {
            (cluster.2 + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)
        };
        nuclei.push(Nucleus {
            cy,
            cx,
            ry,
            rx,
            theta,
            dab,
        });
        dab_intensities.push(dab);
    }

    // Smooth seeded background texture, shared by both renderings so
    // the pair stays spatially registered.
    let (p1, p2, p3, p4) = (
        rng.random_range(0.05..0.22),
        rng.random_range(0.05..0.22),
        rng.random_range(0.0..6.28),
        rng.random_range(0.0..6.28),
    );
    let tex = |y: f64, x: f64| -> f64 {
        0.03 * params.texture_scale * ((y * p1 + p3).sin() + (x * p2 + p4).cos())
    };

    let mut he = Array3::<f64>::zeros((3, s, s));
    let mut ihc = Array3::<f64>::zeros((3, s, s));
    let mut molecular = Array2::<f64>::zeros((s, s));
    for y in 0..s {
        for x in 0..s {
            let t = tex(y as f64, x as f64);
            // Strongest-nucleus coverage wins at overlaps.
            let mut alpha = 0.0;
            let mut dab = 0.0;
            for n in &nuclei {
                if (y as f64 - n.cy).abs() > n.ry + 2.0 || (x as f64 - n.cx).abs() > n.rx + 2.0
                {
                    continue;
                }
                let a = n.coverage(y as f64, x as f64);
                if a > alpha {
                    alpha = a;
                    dab = n.dab;
                }
            }
            molecular[[y, x]] = alpha * dab;
            let mix = dab_mix(dab);
            for ch in 0..3 {
                let he_bg = (HE_BACKGROUND[ch] + t).clamp(0.0, 1.0);
                let he_v = he_bg * (1.0 - alpha) + HE_NUCLEUS[ch] * alpha;
                he[[ch, y, x]] = he_v.clamp(0.0, 1.0);

                let ihc_bg = (IHC_BACKGROUND[ch] + t).clamp(0.0, 1.0);
                let stain = IHC_COUNTERSTAIN[ch] * (1.0 - mix) + DAB_BROWN[ch] * mix;
                let ihc_v = ihc_bg * (1.0 - alpha) + stain * alpha;
                ihc[[ch, y, x]] = ihc_v.clamp(0.0, 1.0);
            }
        }
    }

    let thresholds = DabThresholds::default();
    let bins = stratify_nuclei(&dab_intensities, thresholds).expect("ordered defaults");
    let counts = NucleiCounts {
        n0: bins[0],
        n1: bins[1],
        n2: bins[2],
        n3: bins[3],
        n_total: params.n_nuclei as u32,
    };
    let positives: Vec<f64> = dab_intensities
        .iter()
        .copied()
        .filter(|&d| d >= thresholds.t1)
        .collect();
    let intensity_class = if positives.is_empty() {
        0
    } else {
        intensity_class_of_mean(
            positives.iter().sum::<f64>() / positives.len() as f64,
            thresholds,
        )
    };

    SyntheticPair {
        x_he: Image::new(he.mapv(|v| T::of(v))).expect("rendered in range"),
        x_ihc: Image::new(ihc.mapv(|v| T::of(v))).expect("rendered in range"),
        molecular_map: molecular,
        dab_intensities,
        counts,
        intensity_class,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{h_score, ki67_positive_pct};

    #[test]
    fn same_seed_reproduces_bitwise() {
        let p = GenParams::default();
        let a = generate_pair::<f32>(42, &p);
        let b = generate_pair::<f32>(42, &p);
        assert_eq!(a.x_he.data(), b.x_he.data());
        assert_eq!(a.x_ihc.data(), b.x_ihc.data());
        assert_eq!(a.molecular_map, b.molecular_map);
        assert_eq!(a.counts, b.counts);
        let c = generate_pair::<f32>(43, &p);
        assert_ne!(a.x_he.data(), c.x_he.data());
    }

    #[test]
    fn zero_positivity_means_zero_ki67() {
        let params = GenParams {
            positivity_rate: 0.0,
            ..Default::default()
        };
        for seed in 0..5 {
            let pair = generate_pair::<f32>(seed, &params);
            assert_eq!(ki67_positive_pct(&pair.counts).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_nuclei_exercises_the_zero_total_error_path() {
        let params = GenParams {
            n_nuclei: 0,
            ..Default::default()
        };
        let pair = generate_pair::<f32>(1, &params);
        assert_eq!(pair.counts.n_total, 0);
        assert!(h_score(&pair.counts).is_err());
        // Blank tissue: no nucleus pixels.
        assert!(pair.molecular_map.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn recorded_counts_match_scoring_on_emitted_intensities() {
        for seed in 0..8 {
            let pair = generate_pair::<f32>(seed, &GenParams::default());
            let bins =
                stratify_nuclei(&pair.dab_intensities, DabThresholds::default()).unwrap();
            assert_eq!(
                [pair.counts.n0, pair.counts.n1, pair.counts.n2, pair.counts.n3],
                bins
            );
            assert_eq!(
                pair.counts.n_total as usize,
                pair.dab_intensities.len()
            );
        }
    }

    #[test]
    fn brown_channel_tracks_molecular_map() {
        // The blue channel drops as expression rises (brown absorbs
        // blue), for fully covered nucleus pixels.
        let pair = generate_pair::<f64>(7, &GenParams {
            n_nuclei: 16,
            positivity_rate: 1.0,
            ..Default::default()
        });
        let mut samples: Vec<(f64, f64)> = Vec::new();
        for y in 0..64 {
            for x in 0..64 {
                let m = pair.molecular_map[[y, x]];
                if m > 0.0 {
                    samples.push((m, pair.x_ihc.data()[[2, y, x]]));
                }
            }
        }
        assert!(samples.len() > 50);
        // Spearman-style check: sort by m, blue must not increase on
        // average between low and high thirds.
        samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let lo: f64 = samples[..samples.len() / 3]
            .iter()
            .map(|&(_, b)| b)
            .sum::<f64>()
            / (samples.len() / 3) as f64;
        let hi: f64 = samples[2 * samples.len() / 3..]
            .iter()
            .map(|&(_, b)| b)
            .sum::<f64>()
            / (samples.len() - 2 * samples.len() / 3) as f64;
        assert!(
            hi < lo,
            "higher expression must look browner (less blue): lo {lo}, hi {hi}"
        );
    }

    #[test]
    fn morphology_does_not_encode_expression() {
        // The H&E rendering is expression-blind: regenerate with the
        // same seed but flipped positivity and the H&E stays identical
        // only if nuclei placement matches; instead verify that H&E
        // nucleus pixels look the same regardless of the nucleus' DAB
        // intensity by comparing color statistics of positive versus
        // negative nuclei within one image.
        let pair = generate_pair::<f64>(11, &GenParams {
            n_nuclei: 32,
            positivity_rate: 0.5,
            ..Default::default()
        });
        // Collect H&E colors at strongly covered pixels, split by the
        // underlying expression.
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for y in 0..64 {
            for x in 0..64 {
                let m = pair.molecular_map[[y, x]];
                let he_r = pair.x_he.data()[[0, y, x]];
                if he_r < 0.6 {
                    // nucleus pixel (dark in H&E)
                    if m > 0.2 {
                        pos.push(he_r);
                    } else {
                        neg.push(he_r);
                    }
                }
            }
        }
        if pos.len() > 20 && neg.len() > 20 {
            let mp = pos.iter().sum::<f64>() / pos.len() as f64;
            let mn = neg.iter().sum::<f64>() / neg.len() as f64;
            assert!(
                (mp - mn).abs() < 0.05,
                "H&E appearance must not leak expression: {mp} vs {mn}"
            );
        }
    }
}
