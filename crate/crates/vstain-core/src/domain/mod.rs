//! Shared value types: images, feature maps, scale schedules, codebooks,
//! token pyramids, per-scale projections, and loss weights.
//!
//! Everything here is an immutable value after construction and safe to
//! share across threads.

mod codebook;
mod image;
mod projection;
mod pyramid;
mod schedule;
mod weights;

pub use codebook::Codebook;
pub use image::{FeatureMap, Image};
pub use projection::ScaleProjection;
pub use pyramid::TokenPyramid;
pub use schedule::{validate_schedule, ScaleSchedule, ScheduleViolation};
pub use weights::LossWeights;

use thiserror::Error;

/// Construction errors for domain values.
#[derive(Debug, Error)]
pub enum DomainError {
    #[error("image must have non-finite-free values in [0,1], got {value} at index {index}")]
    ImageValueOutOfRange { index: usize, value: f64 },
    #[error("image sides must be at least 8 pixels, got {height}x{width}")]
    ImageTooSmall { height: usize, width: usize },
    #[error("feature map contains a non-finite value at index {index}")]
    NonFiniteFeature { index: usize },
    #[error("codebook needs at least 2 entries, got {0}")]
    CodebookTooSmall(usize),
    #[error("codebook entry {index} contains a non-finite value")]
    NonFiniteCodeword { index: usize },
    #[error("schedule invalid: {0:?}")]
    InvalidSchedule(Vec<ScheduleViolation>),
    #[error("token index {index} at scale {scale} exceeds vocabulary size {vocab}")]
    TokenOutOfRange {
        scale: usize,
        index: u32,
        vocab: usize,
    },
    #[error("scale {scale} index grid has shape {got:?}, schedule says {expected:?}")]
    GridShapeMismatch {
        scale: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
}
