//! Small data-handling helpers shared by the training loops.

use ndarray::{Array3, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Stacks equally shaped `(C, H, W)` arrays into `(N, C, H, W)`.
pub fn stack3<T: Scalar>(arrs: &[Array3<T>]) -> ArrayD<T> {
    let (c, h, w) = arrs[0].dim();
    let mut out = ArrayD::<T>::zeros(IxDyn(&[arrs.len(), c, h, w]));
    for (i, a) in arrs.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i)
            .assign(&a.clone().into_dyn());
    }
    out
}

/// Extracts sample `i` of a `(N, C, H, W)` value as `(C, H, W)`.
pub fn unstack3<T: Scalar>(batch: &ArrayD<T>, i: usize) -> Array3<T> {
    batch
        .index_axis(ndarray::Axis(0), i)
        .to_owned()
        .into_dimensionality::<ndarray::Ix3>()
        .expect("batch is 4-D")
}
