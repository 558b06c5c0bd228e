//! Corner-aligned bilinear resampling.
//!
//! One kernel serves both upsampling and downsampling. Sampling
//! positions map output index `i` to source coordinate
//! `i * (S-1) / (D-1)`; a singleton output dimension samples the source
//! center `(S-1)/2`. Bilinear interpolation of the four neighbors
//! preserves constants exactly and reduces to the identity when the
//! sizes match.

use ndarray::Array3;

use crate::domain::FeatureMap;
use crate::scalar::Scalar;

/// Per-axis sample positions and blend weights for one output size.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src as f64 - 1.0) / 2.0
            } else {
                i as f64 * (src as f64 - 1.0) / (dst as f64 - 1.0)
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            let frac = pos - lo as f64;
            (lo, hi, frac)
        })
        .collect()
}

/// Resamples a `(C, H, W)` grid to `(C, h, w)`.
pub fn bilinear_resize<T: Scalar>(input: &Array3<T>, h: usize, w: usize) -> Array3<T> {
    let (c, sh, sw) = input.dim();
    assert!(h >= 1 && w >= 1, "target size must be at least 1x1");
    if (sh, sw) == (h, w) {
        return input.clone();
    }
    let rows = axis_taps(sh, h);
    let cols = axis_taps(sw, w);
    let mut out = Array3::<T>::zeros((c, h, w));
    for ch in 0..c {
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let v00 = input[[ch, y0, x0]].as_f64();
                let v01 = input[[ch, y0, x1]].as_f64();
                let v10 = input[[ch, y1, x0]].as_f64();
                let v11 = input[[ch, y1, x1]].as_f64();
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                out[[ch, oy, ox]] = T::of(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_resize`]: scatters an output-shaped gradient
/// back onto the source grid with the same weights.
pub fn bilinear_resize_adjoint<T: Scalar>(
    grad_out: &Array3<T>,
    src_h: usize,
    src_w: usize,
) -> Array3<T> {
    let (c, h, w) = grad_out.dim();
    if (src_h, src_w) == (h, w) {
        return grad_out.clone();
    }
    let rows = axis_taps(src_h, h);
    let cols = axis_taps(src_w, w);
    let mut out = Array3::<T>::zeros((c, src_h, src_w));
    for ch in 0..c {
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let g = grad_out[[ch, oy, ox]].as_f64();
                out[[ch, y0, x0]] += T::of(g * (1.0 - fx) * (1.0 - fy));
                out[[ch, y0, x1]] += T::of(g * fx * (1.0 - fy));
                out[[ch, y1, x0]] += T::of(g * (1.0 - fx) * fy);
                out[[ch, y1, x1]] += T::of(g * fx * fy);
            }
        }
    }
    out
}

/// [`bilinear_resize`] over the domain wrapper.
pub fn interpolate<T: Scalar>(f: &FeatureMap<T>, h: usize, w: usize) -> FeatureMap<T> {
    FeatureMap::new(bilinear_resize(f.data(), h, w)).expect("resampling preserves finiteness")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn constants_are_preserved_any_size() {
        let c = 0.731_f64;
        let input = Array3::from_elem((2, 3, 5), c);
        for &(h, w) in &[(1, 1), (2, 2), (3, 5), (7, 11), (9, 2)] {
            let out = bilinear_resize(&input, h, w);
            assert!(out.iter().all(|&v| (v - c).abs() < 1e-12));
        }
    }

    #[test]
    fn identity_when_sizes_match() {
        let input =
            Array3::from_shape_fn((1, 4, 4), |(_, y, x)| (y * 4 + x) as f64 * 0.37 - 1.0);
        assert_eq!(bilinear_resize(&input, 4, 4), input);
    }

    #[test]
    fn two_by_two_reduces_to_center_mean() {
        // Corner-aligned reduction of [[0,1],[2,3]] to 1x1 samples the
        // center; independent direct computation: bilinear at (0.5, 0.5)
        // = 0.25*(0+1+2+3) = 1.5.
        let input = Array3::from_shape_vec((1, 2, 2), vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
        let out = bilinear_resize(&input, 1, 1);
        assert!((out[[0, 0, 0]] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn upsample_hits_corners_exactly() {
        let input = Array3::from_shape_vec((1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let out = bilinear_resize(&input, 5, 5);
        assert_eq!(out[[0, 0, 0]], 1.0);
        assert_eq!(out[[0, 0, 4]], 2.0);
        assert_eq!(out[[0, 4, 0]], 3.0);
        assert_eq!(out[[0, 4, 4]], 4.0);
        // Center is the average of all four corners.
        assert!((out[[0, 2, 2]] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn adjoint_matches_dot_product_identity() {
        // <resize(x), y> == <x, adjoint(y)> for a linear map.
        let x = Array3::from_shape_fn((2, 3, 4), |(c, y, xx)| {
            ((c * 12 + y * 4 + xx) as f64).sin()
        });
        let y = Array3::from_shape_fn((2, 5, 7), |(c, yy, xx)| {
            ((c * 35 + yy * 7 + xx) as f64).cos()
        });
        let fx = bilinear_resize(&x, 5, 7);
        let aty = bilinear_resize_adjoint(&y, 3, 4);
        let lhs: f64 = fx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(aty.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "lhs={lhs} rhs={rhs}");
    }
}
