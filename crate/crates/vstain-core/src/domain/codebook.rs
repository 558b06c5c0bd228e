//! Codeword vocabularies and the digest that binds tokens to them.

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::DomainError;
use crate::scalar::Scalar;

/// `V×C` table of codeword vectors with an identity hash.
///
/// The hash is an order-sensitive digest of the codewords at fixed
/// `f32` little-endian precision, so a token pyramid can be checked
/// against the exact vocabulary it was produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T: Scalar> {
    entries: Array2<T>,
    content_hash: u64,
}

impl<T: Scalar> Codebook<T> {
    pub fn new(entries: Array2<T>) -> Result<Self, DomainError> {
        let v = entries.nrows();
        if v < 2 {
            return Err(DomainError::CodebookTooSmall(v));
        }
        for (i, row) in entries.rows().into_iter().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(DomainError::NonFiniteCodeword { index: i });
            }
        }
        let content_hash = hash_entries(&entries);
        Ok(Self {
            entries,
            content_hash,
        })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<T> {
        &self.entries
    }

    pub fn content_hash(&self) -> u64 {
        self.content_hash
    }

    /// Indices of codeword pairs closer than `tol` in max-abs distance.
    /// Training is expected to end with none.
    pub fn duplicate_rows(&self, tol: f64) -> Vec<(usize, usize)> {
        let v = self.size();
        let mut dups = Vec::new();
        for i in 0..v {
            for j in (i + 1)..v {
                let maxabs = self
                    .entries
                    .row(i)
                    .iter()
                    .zip(self.entries.row(j).iter())
                    .map(|(a, b)| (*a - *b).abs().as_f64())
                    .fold(0.0, f64::max);
                if maxabs <= tol {
                    dups.push((i, j));
                }
            }
        }
        dups
    }

    pub fn cast<U: Scalar>(&self) -> Codebook<U> {
        Codebook::new(self.entries.mapv(|v| U::of(v.as_f64()))).expect("cast preserves validity")
    }
}

/// Order-sensitive digest of codeword bytes at `f32` little-endian
/// precision: the first 8 bytes of SHA-256, read little-endian.
fn hash_entries<T: Scalar>(entries: &Array2<T>) -> u64 {
    let mut hasher = Sha256::new();
    for &v in entries.iter() {
        hasher.update(v.as_f32().to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hash_is_deterministic_and_order_sensitive() {
        let a = Codebook::new(array![[0.0f32, 1.0], [2.0, 3.0]]).unwrap();
        let b = Codebook::new(array![[0.0f32, 1.0], [2.0, 3.0]]).unwrap();
        let c = Codebook::new(array![[2.0f32, 3.0], [0.0, 1.0]]).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn hash_matches_across_scalar_types_at_f32_precision() {
        let a = Codebook::new(array![[0.1f32, 0.2], [0.3, 0.4]]).unwrap();
        let b = a.cast::<f64>();
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn too_small_codebook_rejected() {
        let e = Array2::<f32>::zeros((1, 4));
        assert!(matches!(
            Codebook::new(e),
            Err(DomainError::CodebookTooSmall(1))
        ));
    }

    #[test]
    fn duplicate_rows_found_within_tolerance() {
        let cb = Codebook::new(array![[0.0f64, 0.0], [1.0, 1.0], [1.0, 1.0 + 1e-12]]).unwrap();
        assert_eq!(cb.duplicate_rows(1e-9), vec![(1, 2)]);
        assert!(cb.duplicate_rows(1e-15).is_empty());
    }
}
