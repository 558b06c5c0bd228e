//! The multi-scale token pyramid produced by residual quantization.

use ndarray::Array2;

use super::{DomainError, ScaleSchedule};

/// Ordered sequence of integer index grids over a scale schedule,
/// bound to the codebook that produced it via `codebook_hash`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPyramid {
    schedule: ScaleSchedule,
    indices: Vec<Array2<u32>>,
    codebook_hash: u64,
}

impl TokenPyramid {
    /// Validates grid shapes against the schedule and indices against
    /// `vocab`.
    pub fn new(
        schedule: ScaleSchedule,
        indices: Vec<Array2<u32>>,
        codebook_hash: u64,
        vocab: usize,
    ) -> Result<Self, DomainError> {
        if schedule.num_scales() != indices.len() {
            return Err(DomainError::GridShapeMismatch {
                scale: indices.len(),
                got: (0, 0),
                expected: (schedule.num_scales(), 0),
            });
        }
        for (k, (grid, &(h, w))) in indices.iter().zip(schedule.scales()).enumerate() {
            if grid.dim() != (h, w) {
                return Err(DomainError::GridShapeMismatch {
                    scale: k,
                    got: grid.dim(),
                    expected: (h, w),
                });
            }
            for &idx in grid.iter() {
                if idx as usize >= vocab {
                    return Err(DomainError::TokenOutOfRange {
                        scale: k,
                        index: idx,
                        vocab,
                    });
                }
            }
        }
        Ok(Self {
            schedule,
            indices,
            codebook_hash,
        })
    }

    pub fn schedule(&self) -> &ScaleSchedule {
        &self.schedule
    }

    pub fn num_scales(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[Array2<u32>] {
        &self.indices
    }

    pub fn scale(&self, k: usize) -> &Array2<u32> {
        &self.indices[k]
    }

    pub fn codebook_hash(&self) -> u64 {
        self.codebook_hash
    }

    /// Largest index stored anywhere in the pyramid.
    pub fn max_index(&self) -> u32 {
        self.indices
            .iter()
            .flat_map(|g| g.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn shape_mismatch_rejected() {
        let schedule = ScaleSchedule::new(vec![(2, 2)]);
        let bad = vec![Array2::<u32>::zeros((2, 3))];
        assert!(TokenPyramid::new(schedule, bad, 0, 16).is_err());
    }

    #[test]
    fn out_of_vocab_rejected() {
        let schedule = ScaleSchedule::new(vec![(1, 1)]);
        let mut grid = Array2::<u32>::zeros((1, 1));
        grid[[0, 0]] = 16;
        assert!(matches!(
            TokenPyramid::new(schedule, vec![grid], 0, 16),
            Err(DomainError::TokenOutOfRange { .. })
        ));
    }
}
