//! Tape operations: elementwise math, reductions, linear algebra,
//! normalization, attention plumbing, and the straight-through
//! quantizer.

use ndarray::{Array1, Array2, ArrayD, Axis, Ix2, Ix3, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::domain::Codebook;
use crate::rvq;
use crate::scalar::Scalar;

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let out = va + vb;
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, needs| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| g.clone()),
                ]
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let out = va - vb;
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, needs| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| g.mapv(|x| -x)),
                ]
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value_rc(a);
        let vb = self.value_rc(b);
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let out = &*va * &*vb;
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g * &*vb),
                    needs[1].then(|| g * &*va),
                ]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let s = T::of(c);
        let out = self.value(a) * s;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| vec![Some(g * s)])),
        )
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let s = T::of(c);
        let out = self.value(a).mapv(|x| x + s);
        self.push(out, vec![a], Some(Box::new(|g, _| vec![Some(g.clone())])))
    }

    /// Weighted sum of scalar terms: `sum_i coeff_i * term_i`.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty());
        let mut acc = self.scale(terms[0].0, terms[0].1);
        for &(v, c) in &terms[1..] {
            let t = self.scale(v, c);
            acc = self.add(acc, t);
        }
        acc
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(T) -> T,
        df: impl Fn(T) -> T + 'static,
    ) -> Var {
        let va = self.value_rc(a);
        let out = va.mapv(&f);
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = va.mapv(&df);
                dx *= g;
                vec![Some(dx)]
            })),
        )
    }

    pub fn silu(&mut self, a: Var) -> Var {
        fn sig<T: Scalar>(x: T) -> T {
            T::one() / (T::one() + (-x).exp())
        }
        self.unary(
            a,
            |x| x * sig(x),
            |x| {
                let s = sig(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let va = self.value_rc(a);
        let out = va.mapv(|x| T::one() / (T::one() + (-x).exp()));
        let saved = std::rc::Rc::new(out.clone());
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let dx = saved.mapv(|y| y * (T::one() - y)) * g;
                vec![Some(dx)]
            })),
        )
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                if x > T::zero() {
                    x + (T::one() + (-x).exp()).ln()
                } else {
                    (T::one() + x.exp()).ln()
                }
            },
            |x| T::one() / (T::one() + (-x).exp()),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::of(slope);
        self.unary(
            a,
            move |x| if x >= T::zero() { x } else { x * s },
            move |x| if x >= T::zero() { T::one() } else { s },
        )
    }

    /// |x|, with subgradient 0 at the origin.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.abs(),
            |x| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.len();
        let inv = T::one() / T::of_usize(n);
        let mean = va.iter().copied().sum::<T>() * inv;
        let shape = va.raw_dim();
        self.push(
            ArrayD::from_elem(IxDyn(&[]), mean),
            vec![a],
            Some(Box::new(move |g, _| {
                let gs = *g.iter().next().unwrap() * inv;
                vec![Some(ArrayD::from_elem(shape.clone(), gs))]
            })),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s = va.iter().copied().sum::<T>();
        let shape = va.raw_dim();
        self.push(
            ArrayD::from_elem(IxDyn(&[]), s),
            vec![a],
            Some(Box::new(move |g, _| {
                let gs = *g.iter().next().unwrap();
                vec![Some(ArrayD::from_elem(shape.clone(), gs))]
            })),
        )
    }

    /// Mean absolute difference: the L1 losses of every stage.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean_all(d)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let va = self.value(a);
        let old_shape: Vec<usize> = va.shape().to_vec();
        let out = va
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|e| panic!("reshape {old_shape:?} -> {shape:?}: {e}"));
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                vec![Some(
                    g.as_standard_layout()
                        .to_owned()
                        .into_shape_with_order(IxDyn(&old_shape))
                        .expect("gradient reshapes back"),
                )]
            })),
        )
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let va = self.value(a);
        let out = va
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        let mut inverse = vec![0usize; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                vec![Some(
                    g.view()
                        .permuted_axes(IxDyn(&inverse))
                        .as_standard_layout()
                        .to_owned(),
                )]
            })),
        )
    }

    /// Concatenation along `axis`.
    pub fn concat(&mut self, axis: usize, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let na = va.shape()[axis];
        let out = ndarray::concatenate(Axis(axis), &[va.view(), vb.view()])
            .expect("concat shapes compatible")
            .as_standard_layout()
            .to_owned();
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g, needs| {
                let (ga, gb) = g.view().split_at(Axis(axis), na);
                vec![
                    needs[0].then(|| ga.to_owned()),
                    needs[1].then(|| gb.to_owned()),
                ]
            })),
        )
    }

    /// 2-D matrix product `(M,K) x (K,N)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value_rc(a);
        let vb = self.value_rc(b);
        let a2 = va.view().into_dimensionality::<Ix2>().expect("lhs is 2-D");
        let b2 = vb.view().into_dimensionality::<Ix2>().expect("rhs is 2-D");
        assert_eq!(a2.ncols(), b2.nrows(), "matmul inner dims");
        let out = a2.dot(&b2).into_dyn();
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g, needs| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let a2 = va.view().into_dimensionality::<Ix2>().unwrap();
                let b2 = vb.view().into_dimensionality::<Ix2>().unwrap();
                vec![
                    needs[0].then(|| g2.dot(&b2.t()).into_dyn()),
                    needs[1].then(|| a2.t().dot(&g2).into_dyn()),
                ]
            })),
        )
    }

    /// Batched matmul `(B,M,K) x (B,K,N)`; with `transpose_b`, the rhs
    /// is `(B,N,K)` and multiplied transposed.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Var {
        let va = self.value_rc(a);
        let vb = self.value_rc(b);
        let a3 = va.view().into_dimensionality::<Ix3>().expect("lhs is 3-D");
        let b3 = vb.view().into_dimensionality::<Ix3>().expect("rhs is 3-D");
        let (bs, m, k) = a3.dim();
        let n = if transpose_b { b3.dim().1 } else { b3.dim().2 };
        let mut out = ndarray::Array3::<T>::zeros((bs, m, n));
        for i in 0..bs {
            let ai = a3.index_axis(Axis(0), i);
            let bi = b3.index_axis(Axis(0), i);
            let prod = if transpose_b {
                ai.dot(&bi.t())
            } else {
                ai.dot(&bi)
            };
            out.index_axis_mut(Axis(0), i).assign(&prod);
        }
        let _ = k;
        self.push(
            out.into_dyn(),
            vec![a, b],
            Some(Box::new(move |g, needs| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let a3 = va.view().into_dimensionality::<Ix3>().unwrap();
                let b3 = vb.view().into_dimensionality::<Ix3>().unwrap();
                let bs = a3.dim().0;
                let da = needs[0].then(|| {
                    let mut da = ndarray::Array3::<T>::zeros(a3.dim());
                    for i in 0..bs {
                        let gi = g3.index_axis(Axis(0), i);
                        let bi = b3.index_axis(Axis(0), i);
                        let v = if transpose_b {
                            gi.dot(&bi)
                        } else {
                            gi.dot(&bi.t())
                        };
                        da.index_axis_mut(Axis(0), i).assign(&v);
                    }
                    da.into_dyn()
                });
                let db = needs[1].then(|| {
                    let mut db = ndarray::Array3::<T>::zeros(b3.dim());
                    for i in 0..bs {
                        let gi = g3.index_axis(Axis(0), i);
                        let ai = a3.index_axis(Axis(0), i);
                        let v = if transpose_b {
                            gi.t().dot(&ai)
                        } else {
                            ai.t().dot(&gi)
                        };
                        db.index_axis_mut(Axis(0), i).assign(&v);
                    }
                    db.into_dyn()
                });
                vec![da, db]
            })),
        )
    }

    /// Adds a constant 2-D mask to every batch slice of `(B, L, L)`.
    pub fn add_mask(&mut self, a: Var, mask: Array2<T>) -> Var {
        let va = self.value(a);
        let a3 = va.view().into_dimensionality::<Ix3>().expect("3-D input");
        let mut out = a3.to_owned();
        for mut slice in out.axis_iter_mut(Axis(0)) {
            slice += &mask;
        }
        self.push(
            out.into_dyn(),
            vec![a],
            Some(Box::new(|g, _| vec![Some(g.clone())])),
        )
    }

    /// Adds a per-last-dim bias `b (D)` to `x (..., D)`.
    pub fn bias_last(&mut self, x: Var, b: Var) -> Var {
        let vx = self.value(x);
        let vb = self.value(b);
        let d = *vx.shape().last().expect("non-scalar");
        assert_eq!(vb.len(), d, "bias_last dim mismatch");
        let b1 = vb.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut out = vx.to_owned();
        for mut row in out.rows_mut() {
            row += &b1;
        }
        self.push(
            out,
            vec![x, b],
            Some(Box::new(move |g, needs| {
                let dx = needs[0].then(|| g.clone());
                let db = needs[1].then(|| {
                    let mut acc = Array1::<T>::zeros(d);
                    for row in g.rows() {
                        acc += &row;
                    }
                    acc.into_dyn()
                });
                vec![dx, db]
            })),
        )
    }

    /// Multiplies `x (..., D)` by a per-last-dim vector `w (D)`.
    pub fn mul_last(&mut self, x: Var, w: Var) -> Var {
        let vx = self.value_rc(x);
        let vw = self.value_rc(w);
        let d = *vx.shape().last().expect("non-scalar");
        assert_eq!(vw.len(), d, "mul_last dim mismatch");
        let w1 = vw.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut out = (*vx).clone();
        for mut row in out.rows_mut() {
            row *= &w1;
        }
        self.push(
            out,
            vec![x, w],
            Some(Box::new(move |g, needs| {
                let w1 = vw.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let dx = needs[0].then(|| {
                    let mut dx = g.to_owned();
                    for mut row in dx.rows_mut() {
                        row *= &w1;
                    }
                    dx
                });
                let dw = needs[1].then(|| {
                    let mut acc = Array1::<T>::zeros(d);
                    for (grow, xrow) in g.rows().into_iter().zip(vx.rows()) {
                        for i in 0..d {
                            acc[i] += grow[i] * xrow[i];
                        }
                    }
                    acc.into_dyn()
                });
                vec![dx, dw]
            })),
        )
    }

    /// Broadcast-multiplies `x (N, L, D)` by per-sequence vectors
    /// `s (N, D)` along the middle axis.
    pub fn row_mul(&mut self, x: Var, s: Var) -> Var {
        let vx = self.value_rc(x);
        let vs = self.value_rc(s);
        let x3 = vx.view().into_dimensionality::<Ix3>().expect("x is 3-D");
        let s2 = vs.view().into_dimensionality::<Ix2>().expect("s is 2-D");
        let (n, l, d) = x3.dim();
        assert_eq!(s2.dim(), (n, d), "row_mul shape mismatch");
        let mut out = x3.to_owned();
        for i in 0..n {
            let srow = s2.row(i);
            for j in 0..l {
                let mut r = out.index_axis_mut(Axis(0), i);
                let mut r = r.index_axis_mut(Axis(0), j);
                r *= &srow;
            }
        }
        self.push(
            out.into_dyn(),
            vec![x, s],
            Some(Box::new(move |g, needs| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let x3 = vx.view().into_dimensionality::<Ix3>().unwrap();
                let s2 = vs.view().into_dimensionality::<Ix2>().unwrap();
                let (n, l, d) = x3.dim();
                let dx = needs[0].then(|| {
                    let mut dx = g3.to_owned();
                    for i in 0..n {
                        let srow = s2.row(i);
                        for j in 0..l {
                            let mut r = dx.index_axis_mut(Axis(0), i);
                            let mut r = r.index_axis_mut(Axis(0), j);
                            r *= &srow;
                        }
                    }
                    dx.into_dyn()
                });
                let ds = needs[1].then(|| {
                    let mut ds = Array2::<T>::zeros((n, d));
                    for i in 0..n {
                        for j in 0..l {
                            for k in 0..d {
                                ds[[i, k]] += g3[[i, j, k]] * x3[[i, j, k]];
                            }
                        }
                    }
                    ds.into_dyn()
                });
                vec![dx, ds]
            })),
        )
    }

    /// Broadcast-adds per-sequence vectors `s (N, D)` to `x (N, L, D)`.
    pub fn row_add(&mut self, x: Var, s: Var) -> Var {
        let vx = self.value(x);
        let vs = self.value(s);
        let x3 = vx.view().into_dimensionality::<Ix3>().expect("x is 3-D");
        let s2 = vs.view().into_dimensionality::<Ix2>().expect("s is 2-D");
        let (n, l, d) = x3.dim();
        assert_eq!(s2.dim(), (n, d), "row_add shape mismatch");
        let mut out = x3.to_owned();
        for i in 0..n {
            let srow = s2.row(i);
            for j in 0..l {
                let mut r = out.index_axis_mut(Axis(0), i);
                let mut r = r.index_axis_mut(Axis(0), j);
                r += &srow;
            }
        }
        self.push(
            out.into_dyn(),
            vec![x, s],
            Some(Box::new(move |g, needs| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let (n, l, d) = g3.dim();
                let dx = needs[0].then(|| g.clone());
                let ds = needs[1].then(|| {
                    let mut ds = Array2::<T>::zeros((n, d));
                    for i in 0..n {
                        for j in 0..l {
                            for k in 0..d {
                                ds[[i, k]] += g3[[i, j, k]];
                            }
                        }
                    }
                    ds.into_dyn()
                });
                vec![dx, ds]
            })),
        )
    }

    /// Rows `start..start+len` of a 2-D value.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        let x2 = vx.view().into_dimensionality::<Ix2>().expect("2-D input");
        let (l, d) = x2.dim();
        assert!(start + len <= l, "row slice out of range");
        let out = x2.slice(ndarray::s![start..start + len, ..]).to_owned();
        self.push(
            out.into_dyn(),
            vec![x],
            Some(Box::new(move |g, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = Array2::<T>::zeros((l, d));
                dx.slice_mut(ndarray::s![start..start + len, ..]).assign(&g2);
                vec![Some(dx.into_dyn())]
            })),
        )
    }

    /// Sequence positions `start..start+len` of a `(N, L, C)` value.
    pub fn slice_mid(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        let x3 = vx.view().into_dimensionality::<Ix3>().expect("3-D input");
        let (n, l, c) = x3.dim();
        assert!(start + len <= l, "sequence slice out of range");
        let out = x3.slice(ndarray::s![.., start..start + len, ..]).to_owned();
        self.push(
            out.into_dyn(),
            vec![x],
            Some(Box::new(move |g, _| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let mut dx = ndarray::Array3::<T>::zeros((n, l, c));
                dx.slice_mut(ndarray::s![.., start..start + len, ..])
                    .assign(&g3);
                vec![Some(dx.into_dyn())]
            })),
        )
    }

    /// Adds a `(L, D)` table to every batch slice of `x (N, L, D)`.
    /// Used for positional and scale embeddings.
    pub fn add_seq_bias(&mut self, x: Var, p: Var) -> Var {
        let vx = self.value(x);
        let vp = self.value(p);
        let x3 = vx.view().into_dimensionality::<Ix3>().expect("x is 3-D");
        let p2 = vp.view().into_dimensionality::<Ix2>().expect("p is 2-D");
        let (n, l, d) = x3.dim();
        assert_eq!(p2.dim(), (l, d), "sequence bias shape");
        let mut out = x3.to_owned();
        for i in 0..n {
            let mut slice = out.index_axis_mut(Axis(0), i);
            slice += &p2;
        }
        self.push(
            out.into_dyn(),
            vec![x, p],
            Some(Box::new(move |g, needs| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let dx = needs[0].then(|| g.clone());
                let dp = needs[1].then(|| {
                    let mut dp = Array2::<T>::zeros((l, d));
                    for i in 0..n {
                        dp += &g3.index_axis(Axis(0), i);
                    }
                    dp.into_dyn()
                });
                vec![dx, dp]
            })),
        )
    }

    /// Expands a `(K, D)` table into `(L, D)` by repeating row `k`
    /// `counts[k]` times. Backward sums the repeats.
    pub fn repeat_rows(&mut self, x: Var, counts: &[usize]) -> Var {
        let vx = self.value(x);
        let x2 = vx.view().into_dimensionality::<Ix2>().expect("2-D input");
        let (k, d) = x2.dim();
        assert_eq!(k, counts.len(), "one count per row");
        let l: usize = counts.iter().sum();
        let mut out = Array2::<T>::zeros((l, d));
        let mut row = 0;
        for (i, &cnt) in counts.iter().enumerate() {
            for _ in 0..cnt {
                out.row_mut(row).assign(&x2.row(i));
                row += 1;
            }
        }
        let counts = counts.to_vec();
        self.push(
            out.into_dyn(),
            vec![x],
            Some(Box::new(move |g, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = Array2::<T>::zeros((k, d));
                let mut row = 0;
                for (i, &cnt) in counts.iter().enumerate() {
                    for _ in 0..cnt {
                        let mut r = dx.row_mut(i);
                        r += &g2.row(row);
                        row += 1;
                    }
                }
                vec![Some(dx.into_dyn())]
            })),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let d = *va.shape().last().expect("non-scalar");
        let mut out = va.to_owned();
        for mut row in out.rows_mut() {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let saved = std::rc::Rc::new(out.clone());
        let _ = d;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = g.to_owned();
                for (mut drow, yrow) in dx.rows_mut().into_iter().zip(saved.rows()) {
                    let dot: T = drow
                        .iter()
                        .zip(yrow.iter())
                        .map(|(a, b)| *a * *b)
                        .sum();
                    for (dv, yv) in drow.iter_mut().zip(yrow.iter()) {
                        *dv = *yv * (*dv - dot);
                    }
                }
                vec![Some(dx)]
            })),
        )
    }

    /// Mean cross-entropy of logits `(P, V)` against target indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let vl = self.value(logits);
        let l2 = vl.view().into_dimensionality::<Ix2>().expect("logits 2-D");
        let (p, v) = l2.dim();
        assert_eq!(targets.len(), p, "one target per row");
        assert!(
            targets.iter().all(|&t| t < v),
            "target index out of vocabulary"
        );
        let mut probs = Array2::<T>::zeros((p, v));
        let mut loss = T::zero();
        for (i, row) in l2.rows().into_iter().enumerate() {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                probs[[i, j]] = e;
                sum += e;
            }
            for j in 0..v {
                probs[[i, j]] = probs[[i, j]] / sum;
            }
            loss += sum.ln() + m - row[targets[i]];
        }
        loss = loss / T::of_usize(p);
        let targets = targets.to_vec();
        let probs = std::rc::Rc::new(probs);
        self.push(
            ArrayD::from_elem(IxDyn(&[]), loss),
            vec![logits],
            Some(Box::new(move |g, _| {
                let gs = *g.iter().next().unwrap() / T::of_usize(targets.len());
                let mut dl = probs.as_ref().clone();
                for (i, &t) in targets.iter().enumerate() {
                    dl[[i, t]] = dl[[i, t]] - T::one();
                }
                dl *= gs;
                vec![Some(dl.into_dyn())]
            })),
        )
    }

    /// Layer normalization over the last axis, no affine part.
    pub fn layer_norm_last(&mut self, a: Var, eps: f64) -> Var {
        let va = self.value(a);
        let d = *va.shape().last().expect("non-scalar");
        let dn = T::of_usize(d);
        let e = T::of(eps);
        let mut out = va.to_owned();
        let mut invs = Vec::with_capacity(out.len() / d);
        for mut row in out.rows_mut() {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row
                .iter()
                .map(|&x| (x - mean) * (x - mean))
                .sum::<T>()
                / dn;
            let inv = T::one() / (var + e).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
            invs.push(inv);
        }
        let xhat = std::rc::Rc::new(out.clone());
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _| {
                let mut dx = g.to_owned();
                for ((mut drow, yrow), &inv) in dx
                    .rows_mut()
                    .into_iter()
                    .zip(xhat.rows())
                    .zip(invs.iter())
                {
                    let dn = T::of_usize(drow.len());
                    let mean_g = drow.iter().copied().sum::<T>() / dn;
                    let mean_gy: T = drow
                        .iter()
                        .zip(yrow.iter())
                        .map(|(a, b)| *a * *b)
                        .sum::<T>()
                        / dn;
                    for (dv, yv) in drow.iter_mut().zip(yrow.iter()) {
                        *dv = inv * (*dv - mean_g - *yv * mean_gy);
                    }
                }
                vec![Some(dx)]
            })),
        )
    }

    /// Group normalization of `(N, C, H, W)` with per-channel affine.
    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: f64,
    ) -> Var {
        let vx = self.value_rc(x);
        let x4 = vx
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("group_norm input is 4-D");
        let (n, c, h, w) = x4.dim();
        assert_eq!(c % groups, 0, "channels divisible by groups");
        let cg = c / groups;
        let hw = h * w;
        let m = T::of_usize(cg * hw);
        let e = T::of(eps);
        let vgamma: Vec<T> = self.value(gamma).iter().copied().collect();
        let vbeta: Vec<T> = self.value(beta).iter().copied().collect();
        assert_eq!(vgamma.len(), c);
        assert_eq!(vbeta.len(), c);

        let xs = x4.as_slice().expect("standard layout");
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = ndarray::Array4::<T>::zeros((n, c, h, w));
        let os = out.as_slice_mut().unwrap();
        let mut invs = Array2::<T>::zeros((n, groups));
        for ni in 0..n {
            for gi in 0..groups {
                let base = (ni * c + gi * cg) * hw;
                let span = &xs[base..base + cg * hw];
                let mut mean = T::zero();
                for &v in span {
                    mean += v;
                }
                mean = mean / m;
                let mut var = T::zero();
                for &v in span {
                    let d = v - mean;
                    var += d * d;
                }
                var = var / m;
                let inv = T::one() / (var + e).sqrt();
                invs[[ni, gi]] = inv;
                for (i, &v) in span.iter().enumerate() {
                    xhat[base + i] = (v - mean) * inv;
                }
                for ci in 0..cg {
                    let ch = gi * cg + ci;
                    let g = vgamma[ch];
                    let b = vbeta[ch];
                    let row = base + ci * hw;
                    for i in 0..hw {
                        os[row + i] = xhat[row + i] * g + b;
                    }
                }
            }
        }
        let xhat = std::rc::Rc::new(xhat);
        let gamma_saved = vgamma.clone();
        self.push(
            out.into_dyn(),
            vec![x, gamma, beta],
            Some(Box::new(move |g, needs| {
                let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                let gs = g4.as_slice().expect("standard layout");
                let (n, c, h, w) = g4.dim();
                let cg = c / groups;
                let hw = h * w;
                let m = T::of_usize(cg * hw);

                let dbeta = needs[2].then(|| {
                    let mut db = Array1::<T>::zeros(c);
                    for ni in 0..n {
                        for ch in 0..c {
                            let base = (ni * c + ch) * hw;
                            let mut s = T::zero();
                            for &v in &gs[base..base + hw] {
                                s += v;
                            }
                            db[ch] += s;
                        }
                    }
                    db.into_dyn()
                });
                let dgamma = needs[1].then(|| {
                    let mut dg = Array1::<T>::zeros(c);
                    for ni in 0..n {
                        for ch in 0..c {
                            let base = (ni * c + ch) * hw;
                            let mut s = T::zero();
                            for i in 0..hw {
                                s += gs[base + i] * xhat[base + i];
                            }
                            dg[ch] += s;
                        }
                    }
                    dg.into_dyn()
                });
                let dx = needs[0].then(|| {
                    let mut dx = ndarray::Array4::<T>::zeros((n, c, h, w));
                    let ds = dx.as_slice_mut().unwrap();
                    for ni in 0..n {
                        for gi in 0..groups {
                            let inv = invs[[ni, gi]];
                            let base = (ni * c + gi * cg) * hw;
                            let mut s1 = T::zero();
                            let mut s2 = T::zero();
                            for ci in 0..cg {
                                let ga = gamma_saved[gi * cg + ci];
                                let row = base + ci * hw;
                                for i in 0..hw {
                                    let dxh = gs[row + i] * ga;
                                    s1 += dxh;
                                    s2 += dxh * xhat[row + i];
                                }
                            }
                            let s1 = s1 / m;
                            let s2 = s2 / m;
                            for ci in 0..cg {
                                let ga = gamma_saved[gi * cg + ci];
                                let row = base + ci * hw;
                                for i in 0..hw {
                                    let dxh = gs[row + i] * ga;
                                    ds[row + i] = inv * (dxh - s1 - xhat[row + i] * s2);
                                }
                            }
                        }
                    }
                    dx.into_dyn()
                });
                vec![dx, dgamma, dbeta]
            })),
        )
    }

    /// Per-channel spatial mean: `(N, C, H, W) -> (N, C)`.
    pub fn mean_hw(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let x4 = vx
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("mean_hw input is 4-D");
        let (n, c, h, w) = x4.dim();
        let hw = h * w;
        let inv = T::one() / T::of_usize(hw);
        let xs = x4.as_slice().expect("standard layout");
        let mut out = Array2::<T>::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                let mut s = T::zero();
                for &v in &xs[base..base + hw] {
                    s += v;
                }
                out[[ni, ci]] = s * inv;
            }
        }
        self.push(
            out.into_dyn(),
            vec![x],
            Some(Box::new(move |g, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = ndarray::Array4::<T>::zeros((n, c, h, w));
                let ds = dx.as_slice_mut().unwrap();
                for ni in 0..n {
                    for ci in 0..c {
                        let v = g2[[ni, ci]] * inv;
                        let base = (ni * c + ci) * hw;
                        for d in &mut ds[base..base + hw] {
                            *d = v;
                        }
                    }
                }
                vec![Some(dx.into_dyn())]
            })),
        )
    }

    /// Inverted dropout with keep-rescaling. Identity when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
        if p <= 0.0 {
            return x;
        }
        assert!(p < 1.0, "dropout rate must be < 1");
        let vx = self.value(x);
        let keep = T::of(1.0 - p);
        let mask: ArrayD<T> = ArrayD::from_shape_fn(vx.raw_dim(), |_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                T::one() / keep
            }
        });
        let out = vx * &mask;
        self.push(
            out,
            vec![x],
            Some(Box::new(move |g, _| vec![Some(g * &mask)])),
        )
    }

    /// Straight-through nearest-neighbor quantization of `(N, C, h, w)`
    /// against a codebook. The value is the looked-up codeword map; the
    /// gradient passes through unchanged. Also returns the per-sample
    /// index grids for token extraction and codebook statistics.
    pub fn ste_quantize(
        &mut self,
        x: Var,
        codebook: &Codebook<T>,
    ) -> (Var, Vec<ndarray::Array2<u32>>) {
        let vx = self.value(x);
        let x4 = vx
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("ste_quantize input is 4-D");
        let (n, c, h, w) = x4.dim();
        assert_eq!(c, codebook.dim(), "codebook channel mismatch");
        let mut out = ndarray::Array4::<T>::zeros((n, c, h, w));
        let mut grids = Vec::with_capacity(n);
        for ni in 0..n {
            let slice = x4.index_axis(Axis(0), ni).to_owned();
            let idx = rvq::quantize_nearest(&slice, codebook)
                .expect("channel agreement checked above");
            let z = rvq::lookup(&idx, codebook);
            out.index_axis_mut(Axis(0), ni).assign(&z);
            grids.push(idx);
        }
        let var = self.push(
            out.into_dyn(),
            vec![x],
            // Straight-through: d(quantize)/dx treated as identity.
            Some(Box::new(|g, _| vec![Some(g.clone())])),
        );
        (var, grids)
    }
}
