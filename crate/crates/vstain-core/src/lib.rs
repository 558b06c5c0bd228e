//! Desk-scale virtual immunohistochemistry pipeline.
//!
//! The crate builds H&E → IHC staining synthesis out of four pieces:
//! multi-scale residual vector quantization over a learned codebook
//! ([`rvq`]), modality-specific VQ-VAE tokenizers ([`vqvae`]), a
//! cross-modal latent translator ([`translator`]), and a structure-
//! conditioned next-scale autoregressive transformer ([`var`]).
//! Downstream clinical read-outs (H-Score, Allred, Ki67, HER2) live in
//! [`scoring`]; image fidelity metrics in [`metrics`]; a seeded
//! synthetic benchmark with known ground truth in [`bench`].
//!
//! All numeric code is generic over the scalar type through [`Scalar`]
//! (`f32` for training speed, `f64` for finite-difference gradient
//! checks). Concrete aliases for the common instantiations are exported
//! at the crate root.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod domain;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rvq;
pub mod scalar;
pub mod scoring;
pub mod translator;
pub mod var;
pub mod vqvae;

pub use scalar::Scalar;

pub use domain::{
    Codebook, FeatureMap, Image, LossWeights, ScaleProjection, ScaleSchedule, TokenPyramid,
};

/// `f32` instantiations: the training / inference configuration.
pub type Image32 = Image<f32>;
pub type FeatureMap32 = FeatureMap<f32>;
pub type Codebook32 = Codebook<f32>;
pub type ScaleProjection32 = ScaleProjection<f32>;

/// `f64` instantiations: the verification configuration (gradient
/// checks, oracle comparisons).
pub type Image64 = Image<f64>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type Codebook64 = Codebook<f64>;
pub type ScaleProjection64 = ScaleProjection<f64>;
