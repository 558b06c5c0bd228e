//! Image fidelity metrics: PSNR, windowed SSIM, and a deterministic
//! fixed-filter perceptual distance.
//!
//! The perceptual measure is a proxy: L1 distance between multi-scale
//! band-pass feature stacks (Gaussian pyramid levels plus oriented
//! gradient channels). It is reported as `perceptual_proxy` everywhere
//! and is not a learned metric.

use ndarray::{Array2, ArrayD, IxDyn};
use thiserror::Error;

use crate::domain::Image;
use crate::nn::{Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("images must share shape: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("image {side} smaller than the {window}x{window} SSIM window")]
    TooSmallForWindow { side: usize, window: usize },
}

fn check_shapes<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<(), MetricError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(MetricError::ShapeMismatch {
            a: (a.height(), a.width()),
            b: (b.height(), b.width()),
        });
    }
    Ok(())
}

/// Mean squared error over all channels and pixels.
pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for data range 1.0. Identical
/// images return the `f64::INFINITY` sentinel.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Array2<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = Array2::<f64>::zeros((SSIM_WINDOW, SSIM_WINDOW));
    let denom = 2.0 * SSIM_SIGMA * SSIM_SIGMA;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            let v = (-(dx * dx + dy * dy) / denom).exp();
            w[[y, x]] = v;
            sum += v;
        }
    }
    w.mapv_into(|v| v / sum)
}

/// Structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5), constants `C1 = 0.01^2`, `C2 = 0.03^2` for range 1.0,
/// averaged over valid windows and channels.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    check_shapes(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmallForWindow {
            side: h.min(w),
            window: SSIM_WINDOW,
        });
    }
    let win = gaussian_window();
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..Image::<T>::CHANNELS {
        for oy in 0..=(h - SSIM_WINDOW) {
            for ox in 0..=(w - SSIM_WINDOW) {
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut sxx = 0.0;
                let mut syy = 0.0;
                let mut sxy = 0.0;
                for wy in 0..SSIM_WINDOW {
                    for wx in 0..SSIM_WINDOW {
                        let g = win[[wy, wx]];
                        let x = a.data()[[ch, oy + wy, ox + wx]].as_f64();
                        let y = b.data()[[ch, oy + wy, ox + wx]].as_f64();
                        mx += g * x;
                        my += g * y;
                        sxx += g * x * x;
                        syy += g * y * y;
                        sxy += g * x * y;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cxy = sxy - mx * my;
                let val = ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                total += val;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

// Fixed filters of the perceptual proxy.

fn depthwise_kernel<T: Scalar>(channels: usize, k: &Array2<f64>) -> ArrayD<T> {
    let (kh, kw) = k.dim();
    let mut w = ArrayD::<T>::zeros(IxDyn(&[channels, channels, kh, kw]));
    for c in 0..channels {
        for y in 0..kh {
            for x in 0..kw {
                w[[c, c, y, x]] = T::of(k[[y, x]]);
            }
        }
    }
    w
}

fn gauss5() -> Array2<f64> {
    // Binomial 5-tap outer product, normalized.
    let t = [1.0, 4.0, 6.0, 4.0, 1.0];
    let mut k = Array2::<f64>::zeros((5, 5));
    let mut sum = 0.0;
    for y in 0..5 {
        for x in 0..5 {
            k[[y, x]] = t[y] * t[x];
            sum += k[[y, x]];
        }
    }
    k.mapv_into(|v| v / sum)
}

fn sobel_x() -> Array2<f64> {
    ndarray::array![[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]] / 8.0
}

fn sobel_y() -> Array2<f64> {
    sobel_x().t().to_owned()
}

const PROXY_LEVELS: usize = 3;
const PROXY_RAW_WEIGHT: f64 = 0.1;
const PROXY_DETAIL_WEIGHT: f64 = 2.0;
const PROXY_GRAD_WEIGHT: f64 = 0.5;
/// Fine-to-coarse band emphasis; high-frequency disagreement counts
/// most.
const PROXY_LEVEL_DECAY: [f64; PROXY_LEVELS] = [1.0, 0.4, 0.15];

/// Tape form of the proxy distance between two `(N, 3, H, W)` batches.
/// Used both as the training perceptual loss and (on a no-grad tape)
/// as the reported metric, so the two always agree.
///
/// Per pyramid level the feature stack is the Laplacian detail band
/// (image minus its blur) and two oriented gradient channels; the raw
/// pixels enter once at level 0, which makes the distance zero only
/// for identical inputs. Every feature is a fixed linear map, so the
/// L1 combination is a true metric.
pub fn perceptual_proxy_op<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Var {
    let channels = tape.value(a).shape()[1];
    let blur = depthwise_kernel::<T>(channels, &gauss5());
    let gx = depthwise_kernel::<T>(channels, &sobel_x());
    let gy = depthwise_kernel::<T>(channels, &sobel_y());

    let mut terms: Vec<(Var, f64)> = Vec::new();
    let mut cur_a = a;
    let mut cur_b = b;
    for level in 0..PROXY_LEVELS {
        let lw = PROXY_LEVEL_DECAY[level];
        if level == 0 {
            let raw = tape.l1(cur_a, cur_b);
            terms.push((raw, PROXY_RAW_WEIGHT * lw));
        }

        let kb = tape.constant(blur.clone());
        let low_a = tape.conv2d(cur_a, kb, None, 1, 2);
        let low_b = tape.conv2d(cur_b, kb, None, 1, 2);
        let det_a = tape.sub(cur_a, low_a);
        let det_b = tape.sub(cur_b, low_b);
        let det = tape.l1(det_a, det_b);
        terms.push((det, PROXY_DETAIL_WEIGHT * lw));

        let kx = tape.constant(gx.clone());
        let ax = tape.conv2d(cur_a, kx, None, 1, 1);
        let bx = tape.conv2d(cur_b, kx, None, 1, 1);
        let dx = tape.l1(ax, bx);
        terms.push((dx, PROXY_GRAD_WEIGHT * lw));

        let ky = tape.constant(gy.clone());
        let ay = tape.conv2d(cur_a, ky, None, 1, 1);
        let by = tape.conv2d(cur_b, ky, None, 1, 1);
        let dy = tape.l1(ay, by);
        terms.push((dy, PROXY_GRAD_WEIGHT * lw));

        if level + 1 < PROXY_LEVELS {
            let kd = tape.constant(blur.clone());
            cur_a = tape.conv2d(cur_a, kd, None, 2, 2);
            cur_b = tape.conv2d(cur_b, kd, None, 2, 2);
        }
    }
    tape.weighted_sum(&terms)
}

/// Deterministic perceptual distance between two images. Zero iff the
/// inputs are identical; a true metric (L1 over fixed linear features).
pub fn perceptual_proxy<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    check_shapes(a, b)?;
    let mut tape = Tape::<f64>::no_grad();
    let to_batch = |img: &Image<T>| {
        let (c, h, w) = img.data().dim();
        img.cast::<f64>()
            .into_data()
            .into_shape_with_order(IxDyn(&[1, c, h, w]))
            .unwrap()
    };
    let va = tape.constant(to_batch(a));
    let vb = tape.constant(to_batch(b));
    let d = perceptual_proxy_op(&mut tape, va, vb);
    Ok(tape.scalar(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image<f64> {
        Image::new(Array3::from_shape_fn((3, h, w), |_| rng.random::<f64>())).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 16, 16);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_of_known_mse() {
        // MSE 0.01 -> 20 dB.
        let a = Image::new(Array3::from_elem((3, 8, 8), 0.0)).unwrap();
        let b = Image::new(Array3::from_elem((3, 8, 8), 0.1)).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-10);
    }

    #[test]
    fn psnr_zero_for_full_range_error() {
        let a = Image::new(Array3::from_elem((3, 8, 8), 0.0)).unwrap();
        let b = Image::new(Array3::from_elem((3, 8, 8), 1.0)).unwrap();
        assert!((psnr(&a, &b).unwrap() - 0.0).abs() < 1e-10);
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 12, 15);
        let b = random_image(&mut rng, 12, 15);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::new(Array3::from_elem((3, 8, 8), 0.5)).unwrap();
        assert!(matches!(
            ssim(&a, &a),
            Err(MetricError::TooSmallForWindow { .. })
        ));
    }

    #[test]
    fn ssim_matches_reference_reimplementation_on_inverted_binary() {
        // Independent oracle: non-separable direct windowed SSIM written
        // from the formula, no shared code with the implementation.
        fn reference_ssim(a: &Image<f64>, b: &Image<f64>) -> f64 {
            let sigma = 1.5f64;
            let n = 11usize;
            let c = (n / 2) as f64;
            let mut kernel = vec![0.0; n * n];
            let mut ksum = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let v = (-(((i as f64 - c).powi(2) + (j as f64 - c).powi(2))
                        / (2.0 * sigma * sigma)))
                        .exp();
                    kernel[i * n + j] = v;
                    ksum += v;
                }
            }
            for v in kernel.iter_mut() {
                *v /= ksum;
            }
            let (h, w) = (a.height(), a.width());
            let mut acc = 0.0;
            let mut cnt = 0;
            for ch in 0..3 {
                for y in 0..=(h - n) {
                    for x in 0..=(w - n) {
                        let (mut mx, mut my) = (0.0, 0.0);
                        for i in 0..n {
                            for j in 0..n {
                                mx += kernel[i * n + j] * a.data()[[ch, y + i, x + j]];
                                my += kernel[i * n + j] * b.data()[[ch, y + i, x + j]];
                            }
                        }
                        let (mut vx, mut vy, mut cv) = (0.0, 0.0, 0.0);
                        for i in 0..n {
                            for j in 0..n {
                                let dx = a.data()[[ch, y + i, x + j]] - mx;
                                let dy = b.data()[[ch, y + i, x + j]] - my;
                                vx += kernel[i * n + j] * dx * dx;
                                vy += kernel[i * n + j] * dy * dy;
                                cv += kernel[i * n + j] * dx * dy;
                            }
                        }
                        let c1 = 0.0001;
                        let c2 = 0.0009;
                        acc += ((2.0 * mx * my + c1) * (2.0 * cv + c2))
                            / ((mx * mx + my * my + c1) * (vx + vy + c2));
                        cnt += 1;
                    }
                }
            }
            acc / cnt as f64
        }

        // Checkerboard and its inversion: anti-correlated structure.
        let a = Image::new(Array3::from_shape_fn((3, 16, 16), |(_, y, x)| {
            ((y + x) % 2) as f64
        }))
        .unwrap();
        let b = Image::new(a.data().mapv(|v| 1.0 - v)).unwrap();
        let got = ssim(&a, &b).unwrap();
        let want = reference_ssim(&a, &b);
        assert!(
            (got - want).abs() < 1e-9,
            "ssim {got} vs reference {want}"
        );
        assert!(got < 0.0, "inverted structure must anti-correlate: {got}");
    }

    #[test]
    fn proxy_zero_iff_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_image(&mut rng, 16, 16);
        assert_eq!(perceptual_proxy(&a, &a).unwrap(), 0.0);
        let mut data = a.data().clone();
        data[[0, 3, 3]] = (data[[0, 3, 3]] + 0.5) % 1.0;
        let b = Image::new(data).unwrap();
        assert!(perceptual_proxy(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn proxy_symmetry_and_triangle_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a = random_image(&mut rng, 12, 12);
            let b = random_image(&mut rng, 12, 12);
            let c = random_image(&mut rng, 12, 12);
            let ab = perceptual_proxy(&a, &b).unwrap();
            let ba = perceptual_proxy(&b, &a).unwrap();
            let ac = perceptual_proxy(&a, &c).unwrap();
            let cb = perceptual_proxy(&c, &b).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            assert!(ab <= ac + cb + 1e-9, "triangle violated");
        }
    }

    #[test]
    fn proxy_prefers_blur_over_noise_at_matched_mse() {
        // A lightly blurred copy and a noise-corrupted copy tuned to the
        // same pixel MSE: the band-pass features should penalize the
        // noisy copy more.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // Smooth base image so blur produces a small, structured change.
        let base = Image::new(Array3::from_shape_fn((3, 24, 24), |(c, y, x)| {
            0.5 + 0.4 * ((y as f64 * 0.3 + x as f64 * 0.22 + c as f64).sin())
        }))
        .unwrap();
        // 3x3 box blur.
        let mut blurred = base.data().clone();
        for ch in 0..3 {
            for y in 1..23 {
                for x in 1..23 {
                    let mut s = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            s += base.data()[[ch, y + dy - 1, x + dx - 1]];
                        }
                    }
                    blurred[[ch, y, x]] = s / 9.0;
                }
            }
        }
        let blurred = Image::new(blurred).unwrap();
        let target_mse = mse(&base, &blurred).unwrap();

        // Noise scaled to hit the same MSE.
        let noise = Array3::from_shape_fn((3, 24, 24), |_| rng.random::<f64>() - 0.5);
        let noise_ms: f64 =
            noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
        let scale = (target_mse / noise_ms).sqrt();
        let noisy = Image::from_clamped(base.data() + &noise.mapv(|v| v * scale)).unwrap();

        let d_blur = perceptual_proxy(&base, &blurred).unwrap();
        let d_noise = perceptual_proxy(&base, &noisy).unwrap();
        assert!(
            d_blur < d_noise,
            "blur {d_blur} should score lower than noise {d_noise}"
        );
    }

    #[test]
    fn psnr_monotone_decreasing_in_mse() {
        let a = Image::new(Array3::from_elem((3, 8, 8), 0.5)).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=5 {
            let b = Image::new(Array3::from_elem((3, 8, 8), 0.5 + 0.08 * k as f64)).unwrap();
            let p = psnr(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }
}
