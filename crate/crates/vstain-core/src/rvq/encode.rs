//! Multi-scale residual encoding and feature aggregation.

use ndarray::Array3;

use super::interpolate::bilinear_resize;
use super::quantize::{lookup, quantize_nearest};
use super::CodecError;
use crate::domain::{validate_schedule, Codebook, ScaleProjection, ScaleSchedule, TokenPyramid};
use crate::scalar::Scalar;

/// Output of one multi-scale encoding pass.
///
/// `aggregate + final_residual` reproduces the input feature map
/// elementwise: the residual update and the aggregation are algebraic
/// complements.
#[derive(Debug, Clone)]
pub struct EncodeResult<T: Scalar> {
    pub pyramid: TokenPyramid,
    pub final_residual: Array3<T>,
    pub aggregate: Array3<T>,
}

/// Encodes a `(C, H, W)` feature map into a token pyramid.
///
/// For each scale `k`: the running residual is resampled to
/// `(h_k, w_k)`, quantized, and the projected upsampled codewords are
/// subtracted from the residual. Scales are emitted coarse-to-fine in
/// schedule (FIFO) order.
pub fn encode_multiscale<T: Scalar>(
    features: &Array3<T>,
    codebook: &Codebook<T>,
    schedule: &ScaleSchedule,
    proj: &ScaleProjection<T>,
) -> Result<EncodeResult<T>, CodecError> {
    let (c, grid_h, grid_w) = features.dim();
    let violations = validate_schedule(schedule, (grid_h, grid_w));
    if !violations.is_empty() {
        return Err(CodecError::InvalidSchedule {
            grid: (grid_h, grid_w),
            violations,
        });
    }
    if c != codebook.dim() {
        return Err(CodecError::ChannelMismatch {
            feature: c,
            codebook: codebook.dim(),
        });
    }
    assert_eq!(
        proj.num_scales(),
        schedule.num_scales(),
        "one projection per scale"
    );

    let mut residual = features.clone();
    let mut aggregate = Array3::<T>::zeros(features.dim());
    let mut grids = Vec::with_capacity(schedule.num_scales());
    for (k, &(h, w)) in schedule.scales().iter().enumerate() {
        let down = bilinear_resize(&residual, h, w);
        let indices = quantize_nearest(&down, codebook)?;
        let z = lookup(&indices, codebook);
        let contribution = proj.apply(k, &bilinear_resize(&z, grid_h, grid_w));
        residual = &residual - &contribution;
        aggregate = &aggregate + &contribution;
        grids.push(indices);
    }
    let pyramid = TokenPyramid::new(
        schedule.clone(),
        grids,
        codebook.content_hash(),
        codebook.size(),
    )
    .expect("encoder emits in-range tokens");
    Ok(EncodeResult {
        pyramid,
        final_residual: residual,
        aggregate,
    })
}

/// Rebuilds the aggregated feature map from a token pyramid:
/// the sum over scales of the projected, upsampled codeword grids.
pub fn aggregate_reconstruct<T: Scalar>(
    pyramid: &TokenPyramid,
    codebook: &Codebook<T>,
    proj: &ScaleProjection<T>,
    target: (usize, usize),
) -> Result<Array3<T>, CodecError> {
    if pyramid.codebook_hash() != codebook.content_hash() {
        return Err(CodecError::HashMismatch {
            pyramid: pyramid.codebook_hash(),
            codebook: codebook.content_hash(),
        });
    }
    for (k, grid) in pyramid.indices().iter().enumerate() {
        if let Some(&bad) = grid.iter().find(|&&i| i as usize >= codebook.size()) {
            return Err(CodecError::IndexOutOfRange {
                scale: k,
                index: bad,
                vocab: codebook.size(),
            });
        }
    }
    let (grid_h, grid_w) = target;
    let mut aggregate = Array3::<T>::zeros((codebook.dim(), grid_h, grid_w));
    for (k, grid) in pyramid.indices().iter().enumerate() {
        let z = lookup(grid, codebook);
        let up = bilinear_resize(&z, grid_h, grid_w);
        aggregate = &aggregate + &proj.apply(k, &up);
    }
    Ok(aggregate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))
    }

    fn random_codebook(rng: &mut ChaCha8Rng, v: usize, c: usize) -> Codebook<f64> {
        Codebook::new(Array2::from_shape_fn((v, c), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap()
    }

    #[test]
    fn exact_vocabulary_at_full_resolution_leaves_zero_residual() {
        // K=1 at the full grid with an identity projection and a
        // codebook containing every feature vector exactly.
        let c = 3;
        let f = Array3::from_shape_fn((c, 2, 2), |(ch, y, x)| (ch + 2 * y + x) as f64 * 0.25);
        let mut entries = Array2::<f64>::zeros((4, c));
        for y in 0..2 {
            for x in 0..2 {
                for ch in 0..c {
                    entries[[y * 2 + x, ch]] = f[[ch, y, x]];
                }
            }
        }
        let cb = Codebook::new(entries).unwrap();
        let schedule = ScaleSchedule::new(vec![(2, 2)]);
        let proj = ScaleProjection::identity(1, c);
        let res = encode_multiscale(&f, &cb, &schedule, &proj).unwrap();
        assert!(res.final_residual.iter().all(|&v| v.abs() < 1e-12));
        assert!(res
            .aggregate
            .iter()
            .zip(f.iter())
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn telescoping_identity_holds_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let f = random_features(&mut rng, 2, 4, 4);
            let cb = random_codebook(&mut rng, 8, 2);
            let schedule = ScaleSchedule::new(vec![(2, 2), (4, 4)]);
            let mut proj = ScaleProjection::identity(2, 2);
            // Non-identity projections must not break the identity.
            if trial % 2 == 0 {
                proj = ScaleProjection::new(
                    vec![
                        Array2::from_shape_fn((2, 2), |_| rng.random_range(-0.5..0.5)),
                        Array2::from_shape_fn((2, 2), |_| rng.random_range(-0.5..0.5)),
                    ],
                    vec![
                        ndarray::Array1::from_shape_fn(2, |_| rng.random_range(-0.1..0.1)),
                        ndarray::Array1::from_shape_fn(2, |_| rng.random_range(-0.1..0.1)),
                    ],
                );
            }
            let res = encode_multiscale(&f, &cb, &schedule, &proj).unwrap();
            let recon = &res.aggregate + &res.final_residual;
            let max_err = recon
                .iter()
                .zip(f.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-5, "telescoping violated: {max_err}");
        }
    }

    #[test]
    fn indices_match_straight_line_transcription_of_the_algorithm() {
        // Independent oracle: explicit loops, its own bilinear kernel,
        // its own distance scan.
        fn oracle_resize(f: &Array3<f64>, oh: usize, ow: usize) -> Array3<f64> {
            let (c, sh, sw) = f.dim();
            let mut out = Array3::<f64>::zeros((c, oh, ow));
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let py = if oh == 1 {
                            (sh as f64 - 1.0) / 2.0
                        } else {
                            oy as f64 * (sh as f64 - 1.0) / (oh as f64 - 1.0)
                        };
                        let px = if ow == 1 {
                            (sw as f64 - 1.0) / 2.0
                        } else {
                            ox as f64 * (sw as f64 - 1.0) / (ow as f64 - 1.0)
                        };
                        let (y0, x0) = (py.floor() as usize, px.floor() as usize);
                        let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
                        let (fy, fx) = (py - y0 as f64, px - x0 as f64);
                        out[[ch, oy, ox]] = f[[ch, y0, x0]] * (1.0 - fy) * (1.0 - fx)
                            + f[[ch, y0, x1]] * (1.0 - fy) * fx
                            + f[[ch, y1, x0]] * fy * (1.0 - fx)
                            + f[[ch, y1, x1]] * fy * fx;
                    }
                }
            }
            out
        }

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f = random_features(&mut rng, 2, 4, 4);
        let cb = random_codebook(&mut rng, 8, 2);
        let schedule = ScaleSchedule::new(vec![(2, 2), (4, 4)]);
        let proj = ScaleProjection::identity(2, 2);

        // Oracle replay of the encoding loop.
        let mut residual = f.clone();
        let mut want = Vec::new();
        for &(h, w) in schedule.scales() {
            let down = oracle_resize(&residual, h, w);
            let mut idx = Array2::<u32>::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    let mut best = 0usize;
                    let mut best_d = f64::INFINITY;
                    for v in 0..cb.size() {
                        let mut d = 0.0;
                        for ch in 0..2 {
                            let diff = down[[ch, y, x]] - cb.entries()[[v, ch]];
                            d += diff * diff;
                        }
                        if d < best_d {
                            best_d = d;
                            best = v;
                        }
                    }
                    idx[[y, x]] = best as u32;
                }
            }
            let mut z = Array3::<f64>::zeros((2, h, w));
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..2 {
                        z[[ch, y, x]] = cb.entries()[[idx[[y, x]] as usize, ch]];
                    }
                }
            }
            let up = oracle_resize(&z, 4, 4);
            residual = &residual - &up; // identity projection
            want.push(idx);
        }

        let got = encode_multiscale(&f, &cb, &schedule, &proj).unwrap();
        for (k, idx) in want.iter().enumerate() {
            assert_eq!(got.pyramid.scale(k), idx, "scale {k} disagrees with oracle");
        }
    }

    #[test]
    fn reconstruct_is_aggregate_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_features(&mut rng, 2, 4, 4);
        let cb = random_codebook(&mut rng, 8, 2);
        let schedule = ScaleSchedule::new(vec![(2, 2), (4, 4)]);
        let proj = ScaleProjection::identity(2, 2);
        let enc = encode_multiscale(&f, &cb, &schedule, &proj).unwrap();
        let recon = aggregate_reconstruct(&enc.pyramid, &cb, &proj, (4, 4)).unwrap();
        let diff = &recon - &enc.aggregate;
        assert!(diff.iter().all(|&v| v == 0.0), "decode must be exact");
        let again = aggregate_reconstruct(&enc.pyramid, &cb, &proj, (4, 4)).unwrap();
        assert_eq!(recon, again, "decode must be bitwise deterministic");
    }

    #[test]
    fn single_scale_constant_pyramid_decodes_to_codeword() {
        let cb = random_codebook(&mut ChaCha8Rng::seed_from_u64(1), 4, 3);
        let schedule = ScaleSchedule::new(vec![(2, 2)]);
        let grid = Array2::from_elem((2, 2), 3u32);
        let pyramid =
            TokenPyramid::new(schedule, vec![grid], cb.content_hash(), cb.size()).unwrap();
        let proj = ScaleProjection::identity(1, 3);
        let out = aggregate_reconstruct(&pyramid, &cb, &proj, (2, 2)).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                for ch in 0..3 {
                    assert_eq!(out[[ch, y, x]], cb.entries()[[3, ch]]);
                }
            }
        }
    }

    #[test]
    fn hash_mismatch_is_a_hard_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cb = random_codebook(&mut rng, 4, 2);
        let other = random_codebook(&mut rng, 4, 2);
        let schedule = ScaleSchedule::new(vec![(1, 1)]);
        let pyramid = TokenPyramid::new(
            schedule,
            vec![Array2::zeros((1, 1))],
            cb.content_hash(),
            cb.size(),
        )
        .unwrap();
        let proj = ScaleProjection::identity(1, 2);
        assert!(matches!(
            aggregate_reconstruct(&pyramid, &other, &proj, (1, 1)),
            Err(CodecError::HashMismatch { .. })
        ));
    }

    #[test]
    fn invalid_schedule_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_features(&mut rng, 2, 4, 4);
        let cb = random_codebook(&mut rng, 4, 2);
        let schedule = ScaleSchedule::new(vec![(8, 8)]);
        let proj = ScaleProjection::identity(1, 2);
        assert!(matches!(
            encode_multiscale(&f, &cb, &schedule, &proj),
            Err(CodecError::InvalidSchedule { .. })
        ));
    }

    #[test]
    fn residual_norm_shrinks_with_zero_codeword_available() {
        // With the zero vector in the codebook and identity projections,
        // the quantizer at a full-resolution scale can always pick zero,
        // so the residual L2 norm cannot grow.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let f = random_features(&mut rng, 2, 3, 3);
            let mut entries = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
            entries.row_mut(0).fill(0.0);
            let cb = Codebook::new(entries).unwrap();
            let proj = ScaleProjection::identity(3, 2);

            let mut residual = f.clone();
            let mut prev_norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
            for k in 0..3 {
                let down = bilinear_resize(&residual, 3, 3);
                let idx = quantize_nearest(&down, &cb).unwrap();
                let z = lookup(&idx, &cb);
                let up = bilinear_resize(&z, 3, 3);
                residual = &residual - &proj.apply(k, &up);
                let norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(
                    norm <= prev_norm + 1e-12,
                    "residual norm grew at scale {k}: {prev_norm} -> {norm}"
                );
                prev_norm = norm;
            }
        }
    }
}
