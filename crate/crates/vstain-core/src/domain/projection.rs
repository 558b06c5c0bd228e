//! Scale-specific projections applied to looked-up codewords.

use ndarray::{Array1, Array2, Array3};

use crate::scalar::Scalar;

/// One `C→C` linear map plus bias per scale in the schedule.
///
/// Applied pointwise to a feature map (a 1×1 convolution). Identity
/// weight and zero bias at initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleProjection<T: Scalar> {
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
}

impl<T: Scalar> ScaleProjection<T> {
    pub fn new(weights: Vec<Array2<T>>, biases: Vec<Array1<T>>) -> Self {
        assert_eq!(weights.len(), biases.len());
        for (w, b) in weights.iter().zip(&biases) {
            assert_eq!(w.nrows(), w.ncols(), "projection maps C to C");
            assert_eq!(w.nrows(), b.len());
            assert!(w.iter().all(|x| x.is_finite()));
            assert!(b.iter().all(|x| x.is_finite()));
        }
        Self { weights, biases }
    }

    /// Identity projections for `num_scales` scales of channel width
    /// `channels`.
    pub fn identity(num_scales: usize, channels: usize) -> Self {
        let weights = (0..num_scales)
            .map(|_| Array2::from_shape_fn((channels, channels), |(i, j)| {
                if i == j {
                    T::one()
                } else {
                    T::zero()
                }
            }))
            .collect();
        let biases = (0..num_scales).map(|_| Array1::zeros(channels)).collect();
        Self { weights, biases }
    }

    pub fn num_scales(&self) -> usize {
        self.weights.len()
    }

    pub fn channels(&self) -> usize {
        self.weights.first().map(|w| w.nrows()).unwrap_or(0)
    }

    pub fn weight(&self, k: usize) -> &Array2<T> {
        &self.weights[k]
    }

    pub fn bias(&self, k: usize) -> &Array1<T> {
        &self.biases[k]
    }

    /// Applies projection `k` pointwise: `out[:, y, x] = W f[:, y, x] + b`.
    pub fn apply(&self, k: usize, features: &Array3<T>) -> Array3<T> {
        let (c, h, w) = features.dim();
        let wk = &self.weights[k];
        let bk = &self.biases[k];
        assert_eq!(wk.ncols(), c, "projection channel mismatch");
        let mut out = Array3::<T>::zeros((c, h, w));
        for y in 0..h {
            for x in 0..w {
                for i in 0..c {
                    let mut acc = bk[i];
                    for j in 0..c {
                        acc = acc + wk[[i, j]] * features[[j, y, x]];
                    }
                    out[[i, y, x]] = acc;
                }
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ScaleProjection<U> {
        ScaleProjection {
            weights: self
                .weights
                .iter()
                .map(|w| w.mapv(|v| U::of(v.as_f64())))
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.mapv(|v| U::of(v.as_f64())))
                .collect(),
        }
    }
}
