//! Spatial ops: convolution via im2col, nearest upsampling, and the
//! differentiable bilinear resize shared with the quantizer.
//!
//! The unfold buffer is kept transposed, `(Ci*kh*kw, N*Ho*Wo)`, so
//! both the unfold writes and the output reorders run along
//! contiguous memory and the heavy work stays inside the GEMM.

use ndarray::{Array2, Array4, ArrayView4, Axis, Ix4};

use super::tape::{Tape, Var};
use crate::rvq::{bilinear_resize, bilinear_resize_adjoint};
use crate::scalar::Scalar;

fn conv_out_size(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Unfolds `(N, Ci, H, W)` into `(Ci*kh*kw, N*Ho*Wo)` patches.
fn im2col_t<T: Scalar>(
    x: &ArrayView4<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<T> {
    let (n, ci, h, w) = x.dim();
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    let rows = n * ho * wo;
    let mut cols = Array2::<T>::zeros((ci * kh * kw, rows));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().unwrap();
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let col = (c * kh + ky) * kw + kx;
                let dst_base = col * rows;
                for ni in 0..n {
                    let src_plane = (ni * ci + c) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let dst_row = dst_base + (ni * ho + oy) * wo;
                        if iy < 0 || iy as usize >= h {
                            continue; // zero padding rows stay zero
                        }
                        let src_row = src_plane + iy as usize * w;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            cs[dst_row + ox] = xs[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col_t`]: folds patch gradients back onto the input.
#[allow(clippy::too_many_arguments)]
fn col2im_t<T: Scalar>(
    dcols: &Array2<T>,
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array4<T> {
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    let rows = n * ho * wo;
    let mut dx = Array4::<T>::zeros((n, ci, h, w));
    let ds = dcols.as_slice().expect("standard layout");
    let xs = dx.as_slice_mut().unwrap();
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let col = (c * kh + ky) * kw + kx;
                let src_base = col * rows;
                for ni in 0..n {
                    let dst_plane = (ni * ci + c) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let src_row = src_base + (ni * ho + oy) * wo;
                        let dst_row = dst_plane + iy as usize * w;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            xs[dst_row + ix as usize] += ds[src_row + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `(Co, rows)` matrix view of a `(N, Co, Ho, Wo)` gradient.
fn nchw_to_crows<T: Scalar>(g: &ndarray::ArrayViewD<T>) -> Array2<T> {
    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
    let (n, co, ho, wo) = g4.dim();
    let hw = ho * wo;
    let mut out = Array2::<T>::zeros((co, n * hw));
    let gs = g4.as_slice().expect("standard layout");
    let os = out.as_slice_mut().unwrap();
    for c in 0..co {
        for ni in 0..n {
            let src = (ni * co + c) * hw;
            let dst = c * (n * hw) + ni * hw;
            os[dst..dst + hw].copy_from_slice(&gs[src..src + hw]);
        }
    }
    out
}

/// Inverse of [`nchw_to_crows`].
fn crows_to_nchw<T: Scalar>(y: &Array2<T>, n: usize, co: usize, ho: usize, wo: usize) -> Array4<T> {
    let hw = ho * wo;
    let mut out = Array4::<T>::zeros((n, co, ho, wo));
    let ys = y.as_slice().expect("standard layout");
    let os = out.as_slice_mut().unwrap();
    for c in 0..co {
        for ni in 0..n {
            let src = c * (n * hw) + ni * hw;
            let dst = (ni * co + c) * hw;
            os[dst..dst + hw].copy_from_slice(&ys[src..src + hw]);
        }
    }
    out
}

impl<T: Scalar> Tape<T> {
    /// 2-D convolution of `(N, Ci, H, W)` with weights
    /// `(Co, Ci, kh, kw)` and an optional per-channel bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let vx = self.value_rc(x);
        let vw = self.value_rc(w);
        let x4 = vx.view().into_dimensionality::<Ix4>().expect("input 4-D");
        let w4 = vw.view().into_dimensionality::<Ix4>().expect("weight 4-D");
        let (n, ci, h, wth) = x4.dim();
        let (co, wci, kh, kw) = w4.dim();
        assert_eq!(ci, wci, "conv2d channel mismatch");
        let ho = conv_out_size(h, kh, stride, pad);
        let wo = conv_out_size(wth, kw, stride, pad);

        let cols_t = std::rc::Rc::new(im2col_t(&x4, kh, kw, stride, pad));
        let w_mat = w4
            .to_owned()
            .into_shape_with_order((co, ci * kh * kw))
            .unwrap();
        // (Co, rows)
        let y = w_mat.dot(&*cols_t);
        let mut out = crows_to_nchw(&y, n, co, ho, wo);
        if let Some(bv) = b {
            let vb = self.value(bv);
            let b1 = vb.view().into_dimensionality::<ndarray::Ix1>().unwrap();
            assert_eq!(b1.len(), co, "bias length");
            let hw = ho * wo;
            let os = out.as_slice_mut().unwrap();
            for ni in 0..n {
                for c in 0..co {
                    let base = (ni * co + c) * hw;
                    let bb = b1[c];
                    for v in &mut os[base..base + hw] {
                        *v += bb;
                    }
                }
            }
        }

        let mut parents = vec![x, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        let has_bias = b.is_some();
        self.push(
            out.into_dyn(),
            parents,
            Some(Box::new(move |g, needs| {
                let g_mat = nchw_to_crows(&g.view()); // (Co, rows)
                let w4 = vw.view().into_dimensionality::<Ix4>().unwrap();
                let (co_, ci, kh, kw) = w4.dim();
                let w_mat = w4
                    .to_owned()
                    .into_shape_with_order((co_, ci * kh * kw))
                    .unwrap();

                let dx = needs[0].then(|| {
                    let dcols = w_mat.t().dot(&g_mat); // (CiKK, rows)
                    let (n_, ci_, h_, w_) =
                        vx.view().into_dimensionality::<Ix4>().unwrap().dim();
                    col2im_t(&dcols, n_, ci_, h_, w_, kh, kw, stride, pad).into_dyn()
                });
                let dw = needs[1].then(|| {
                    let dw_mat = g_mat.dot(&cols_t.t()); // (Co, CiKK)
                    dw_mat
                        .into_shape_with_order((co_, ci, kh, kw))
                        .unwrap()
                        .into_dyn()
                });
                let mut grads = vec![dx, dw];
                if has_bias {
                    let db = needs[2].then(|| {
                        let mut db = ndarray::Array1::<T>::zeros(co);
                        let rows = g_mat.ncols();
                        let gs = g_mat.as_slice().unwrap();
                        for (c, acc) in db.iter_mut().enumerate() {
                            let mut s = T::zero();
                            for &v in &gs[c * rows..(c + 1) * rows] {
                                s += v;
                            }
                            *acc = s;
                        }
                        db.into_dyn()
                    });
                    grads.push(db);
                }
                grads
            })),
        )
    }

    /// Nearest-neighbor 2x upsampling of `(N, C, H, W)`.
    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let x4 = vx.view().into_dimensionality::<Ix4>().expect("input 4-D");
        let (n, c, h, w) = x4.dim();
        let mut out = Array4::<T>::zeros((n, c, 2 * h, 2 * w));
        {
            let xs = x4.as_slice().expect("standard layout");
            let os = out.as_slice_mut().unwrap();
            for plane in 0..n * c {
                let src_base = plane * h * w;
                let dst_base = plane * 4 * h * w;
                for y in 0..h {
                    let src = &xs[src_base + y * w..src_base + (y + 1) * w];
                    let d0 = dst_base + 2 * y * 2 * w;
                    for (xx, &v) in src.iter().enumerate() {
                        os[d0 + 2 * xx] = v;
                        os[d0 + 2 * xx + 1] = v;
                    }
                    os.copy_within(d0..d0 + 2 * w, d0 + 2 * w);
                }
            }
        }
        self.push(
            out.into_dyn(),
            vec![x],
            Some(Box::new(move |g, _| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let gs = g4.as_slice().expect("standard layout");
                let mut dx = Array4::<T>::zeros((n, c, h, w));
                let ds = dx.as_slice_mut().unwrap();
                for plane in 0..n * c {
                    let dst_base = plane * h * w;
                    let src_base = plane * 4 * h * w;
                    for y in 0..h {
                        let r0 = src_base + 2 * y * 2 * w;
                        let r1 = r0 + 2 * w;
                        let d = dst_base + y * w;
                        for xx in 0..w {
                            ds[d + xx] = gs[r0 + 2 * xx]
                                + gs[r0 + 2 * xx + 1]
                                + gs[r1 + 2 * xx]
                                + gs[r1 + 2 * xx + 1];
                        }
                    }
                }
                vec![Some(dx.into_dyn())]
            })),
        )
    }

    /// Corner-aligned bilinear resize of `(N, C, H, W)` to `(h, w)`,
    /// sharing the quantizer's interpolation contract.
    pub fn resize_bilinear(&mut self, x: Var, h: usize, w: usize) -> Var {
        let vx = self.value(x);
        let x4 = vx.view().into_dimensionality::<Ix4>().expect("input 4-D");
        let (n, c, sh, sw) = x4.dim();
        let mut out = Array4::<T>::zeros((n, c, h, w));
        for ni in 0..n {
            let slice = x4.index_axis(Axis(0), ni).to_owned();
            out.index_axis_mut(Axis(0), ni)
                .assign(&bilinear_resize(&slice, h, w));
        }
        self.push(
            out.into_dyn(),
            vec![x],
            Some(Box::new(move |g, _| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = Array4::<T>::zeros((n, c, sh, sw));
                for ni in 0..n {
                    let gslice = g4.index_axis(Axis(0), ni).to_owned();
                    dx.index_axis_mut(Axis(0), ni)
                        .assign(&bilinear_resize_adjoint(&gslice, sh, sw));
                }
                vec![Some(dx.into_dyn())]
            })),
        )
    }
}
