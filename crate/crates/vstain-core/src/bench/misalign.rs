//! Misalignment injection with an exactly retained inverse.
//!
//! The warp is a smooth random affine plus a sinusoidal jitter field,
//! rescaled so the maximum displacement is bounded by `magnitude`.
//! Images are warped by pull-back sampling; the inverse displacement
//! field is solved per pixel by fixed-point iteration and stored, so
//! tests and evaluation can re-align exactly (up to interpolation).

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::Image;
use crate::scalar::Scalar;

/// A warp bound to one image size: forward and inverse displacement
/// fields, `(2, H, W)` with dy in channel 0 and dx in channel 1.
#[derive(Debug, Clone)]
pub struct Misalignment {
    pub forward: Array3<f64>,
    pub inverse: Array3<f64>,
    pub magnitude: f64,
}

fn sample_bilinear<T: Scalar>(img: &Image<T>, ch: usize, y: f64, x: f64) -> f64 {
    let h = img.height() as f64;
    let w = img.width() as f64;
    let yc = y.clamp(0.0, h - 1.0);
    let xc = x.clamp(0.0, w - 1.0);
    let y0 = yc.floor() as usize;
    let x0 = xc.floor() as usize;
    let y1 = (y0 + 1).min(img.height() - 1);
    let x1 = (x0 + 1).min(img.width() - 1);
    let fy = yc - y0 as f64;
    let fx = xc - x0 as f64;
    let v00 = img.data()[[ch, y0, x0]].as_f64();
    let v01 = img.data()[[ch, y0, x1]].as_f64();
    let v10 = img.data()[[ch, y1, x0]].as_f64();
    let v11 = img.data()[[ch, y1, x1]].as_f64();
    (v00 * (1.0 - fx) + v01 * fx) * (1.0 - fy) + (v10 * (1.0 - fx) + v11 * fx) * fy
}

fn warp_with<T: Scalar>(img: &Image<T>, field: &Array3<f64>) -> Image<T> {
    let (_, h, w) = img.data().dim();
    let mut out = ndarray::Array3::<T>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let sy = y as f64 + field[[0, y, x]];
            let sx = x as f64 + field[[1, y, x]];
            for ch in 0..3 {
                out[[ch, y, x]] = T::of(sample_bilinear(img, ch, sy, sx));
            }
        }
    }
    Image::new(out).expect("warp stays in range")
}

/// Builds the warp and applies it to the IHC image of a pair.
pub fn inject_misalignment<T: Scalar>(
    x_ihc: &Image<T>,
    magnitude: f64,
    seed: u64,
) -> (Image<T>, Misalignment) {
    assert!(magnitude >= 0.0);
    let (h, w) = (x_ihc.height(), x_ihc.width());
    if magnitude == 0.0 {
        let zero = Array3::<f64>::zeros((2, h, w));
        return (
            x_ihc.clone(),
            Misalignment {
                forward: zero.clone(),
                inverse: zero,
                magnitude,
            },
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: f64 = rng.random_range(-0.05..0.05);
    let scale: f64 = 1.0 + rng.random_range(-0.03..0.03);
    let (ty, tx): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let (jy, jx): (f64, f64) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
    let (fy, fx): (f64, f64) = (rng.random_range(0.05..0.15), rng.random_range(0.05..0.15));
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);

    let mut forward = Array3::<f64>::zeros((2, h, w));
    let mut max_disp = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let ry = scale * (theta.cos() * dy - theta.sin() * dx) + cy + ty;
            let rx = scale * (theta.sin() * dy + theta.cos() * dx) + cx + tx;
            let disp_y = ry - y as f64 + jy * (x as f64 * fx).sin();
            let disp_x = rx - x as f64 + jx * (y as f64 * fy).cos();
            forward[[0, y, x]] = disp_y;
            forward[[1, y, x]] = disp_x;
            max_disp = max_disp.max((disp_y * disp_y + disp_x * disp_x).sqrt());
        }
    }
    if max_disp > magnitude {
        let s = magnitude / max_disp;
        forward.mapv_inplace(|v| v * s);
    }

    // Inverse displacement by fixed-point iteration of q = p - d(q).
    let sample_field = |field: &Array3<f64>, ch: usize, y: f64, x: f64| -> f64 {
        let yc = y.clamp(0.0, h as f64 - 1.0);
        let xc = x.clamp(0.0, w as f64 - 1.0);
        let y0 = yc.floor() as usize;
        let x0 = xc.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let gy = yc - y0 as f64;
        let gx = xc - x0 as f64;
        (field[[ch, y0, x0]] * (1.0 - gx) + field[[ch, y0, x1]] * gx) * (1.0 - gy)
            + (field[[ch, y1, x0]] * (1.0 - gx) + field[[ch, y1, x1]] * gx) * gy
    };
    let mut inverse = Array3::<f64>::zeros((2, h, w));
    for y in 0..h {
        for x in 0..w {
            let (mut qy, mut qx) = (y as f64, x as f64);
            for _ in 0..20 {
                qy = y as f64 - sample_field(&forward, 0, qy, qx);
                qx = x as f64 - sample_field(&forward, 1, qy, qx);
            }
            inverse[[0, y, x]] = qy - y as f64;
            inverse[[1, y, x]] = qx - x as f64;
        }
    }

    let warped = warp_with(x_ihc, &forward);
    (
        warped,
        Misalignment {
            forward,
            inverse,
            magnitude,
        },
    )
}

/// Re-aligns a warped image with the retained inverse field.
/// `warped(p) = orig(p + d(p))`, so sampling the warped image through
/// the inverse displacement recovers the original up to interpolation.
pub fn realign<T: Scalar>(warped: &Image<T>, misalignment: &Misalignment) -> Image<T> {
    warp_with(warped, &misalignment.inverse)
}
