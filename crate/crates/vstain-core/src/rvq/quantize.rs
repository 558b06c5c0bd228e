//! Nearest-neighbor vector quantization.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};

use super::CodecError;
use crate::domain::Codebook;
use crate::scalar::Scalar;

/// Index of the codeword nearest to `vector` in Euclidean distance.
/// Ties break to the lowest index: the scan keeps the first strict
/// minimum.
pub fn nearest_index<T: Scalar>(vector: ArrayView1<T>, entries: ArrayView2<T>) -> u32 {
    let mut best = 0u32;
    let mut best_dist = T::infinity();
    for (j, row) in entries.rows().into_iter().enumerate() {
        let mut d = T::zero();
        for (a, b) in vector.iter().zip(row.iter()) {
            let diff = *a - *b;
            d = d + diff * diff;
        }
        if d < best_dist {
            best_dist = d;
            best = j as u32;
        }
    }
    best
}

/// Quantizes every spatial location of a `(C, H, W)` feature grid to
/// its nearest codeword index.
pub fn quantize_nearest<T: Scalar>(
    features: &Array3<T>,
    codebook: &Codebook<T>,
) -> Result<Array2<u32>, CodecError> {
    let (c, h, w) = features.dim();
    if c != codebook.dim() {
        return Err(CodecError::ChannelMismatch {
            feature: c,
            codebook: codebook.dim(),
        });
    }
    let hw = h * w;
    // Position-major staging keeps the inner distance scan contiguous.
    let fs = features.as_slice().expect("standard layout");
    let mut staged = vec![T::zero(); hw * c];
    for ch in 0..c {
        for p in 0..hw {
            staged[p * c + ch] = fs[ch * hw + p];
        }
    }
    let entries = codebook
        .entries()
        .as_slice()
        .expect("codebook standard layout");
    let v = codebook.size();
    let mut out = Array2::<u32>::zeros((h, w));
    let os = out.as_slice_mut().unwrap();
    for p in 0..hw {
        let vector = &staged[p * c..(p + 1) * c];
        let mut best = 0u32;
        let mut best_dist = T::infinity();
        for j in 0..v {
            let row = &entries[j * c..(j + 1) * c];
            let mut d = T::zero();
            for (a, b) in vector.iter().zip(row.iter()) {
                let diff = *a - *b;
                d = d + diff * diff;
            }
            if d < best_dist {
                best_dist = d;
                best = j as u32;
            }
        }
        os[p] = best;
    }
    Ok(out)
}

/// Looks up a grid of indices, producing the `(C, H, W)` codeword map.
pub fn lookup<T: Scalar>(indices: &Array2<u32>, codebook: &Codebook<T>) -> Array3<T> {
    let (h, w) = indices.dim();
    let c = codebook.dim();
    let entries = codebook.entries();
    let mut out = Array3::<T>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let row = entries.row(indices[[y, x]] as usize);
            for ch in 0..c {
                out[[ch, y, x]] = row[ch];
            }
        }
    }
    out
}
