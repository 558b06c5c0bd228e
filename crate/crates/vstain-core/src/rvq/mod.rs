//! Multi-scale residual vector quantization.
//!
//! Encoding walks the scale schedule coarse to fine: at each scale the
//! current residual is resampled to the scale's grid, quantized by
//! nearest-neighbor lookup, and the projected, upsampled codewords are
//! subtracted from the residual. Reconstruction sums the projected
//! upsampled codewords over all scales. The two are exact algebraic
//! complements: `aggregate + final_residual == input`.

mod encode;
mod format;
mod interpolate;
mod quantize;

pub use encode::{aggregate_reconstruct, encode_multiscale, EncodeResult};
pub use format::{deserialize_pyramid, serialize_pyramid, PYRAMID_MAGIC, PYRAMID_VERSION};
pub use interpolate::{bilinear_resize, bilinear_resize_adjoint, interpolate};
pub use quantize::{lookup, nearest_index, quantize_nearest};

use thiserror::Error;

use crate::domain::ScheduleViolation;

/// Errors of the quantization codec and the pyramid wire format.
#[derive(Debug, Error)]
pub enum CodecError {
    #[error("feature channels {feature} do not match codebook dim {codebook}")]
    ChannelMismatch { feature: usize, codebook: usize },
    #[error("schedule invalid for grid {grid:?}: {violations:?}")]
    InvalidSchedule {
        grid: (usize, usize),
        violations: Vec<ScheduleViolation>,
    },
    #[error("pyramid codebook hash {pyramid:#018x} does not match codebook {codebook:#018x}")]
    HashMismatch { pyramid: u64, codebook: u64 },
    #[error("token index {index} at scale {scale} is outside vocabulary of size {vocab}")]
    IndexOutOfRange {
        scale: usize,
        index: u32,
        vocab: usize,
    },
    #[error("bad magic: expected \"RVQP\"")]
    BadMagic,
    #[error("unsupported pyramid format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated stream: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("trailing bytes after pyramid payload: {0}")]
    TrailingBytes(usize),
    #[error("vocabulary size {0} exceeds u16 token storage (max 65536)")]
    VocabTooLarge(usize),
    #[error("invalid scale dimensions {h}x{w} in stream")]
    InvalidScaleDims { h: usize, w: usize },
}
