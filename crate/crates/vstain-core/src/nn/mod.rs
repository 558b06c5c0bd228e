//! Minimal reverse-mode autodiff over `ndarray`, plus the layers and
//! optimizer the three training stages are built from.
//!
//! A [`Tape`] records the forward computation; [`Tape::backward`] walks
//! it in reverse. Values are dynamic-rank arrays; convolutions go
//! through im2col so the heavy work is matrix multiplication. Parameter
//! leaves are bound by name, which is also how gradients are collected
//! and how the optimizer and checkpoints address tensors.

mod adam;
mod conv;
pub mod gradcheck;
mod layers;
mod ops;
mod params;
mod tape;
pub mod util;

pub use adam::Adam;
pub use layers::{normal_init, Conv2dLayer, GroupNormLayer, LinearLayer};
pub use params::{
    param_count, param_hash, params_allclose, ParamVisit,
};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite value produced by {context}")]
    NonFinite { context: &'static str },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("shape mismatch in {context}: {details}")]
    ShapeMismatch {
        context: &'static str,
        details: String,
    },
}
