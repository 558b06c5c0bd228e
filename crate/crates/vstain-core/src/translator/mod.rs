//! Stage (b): cross-modal latent translation from the quantized H&E
//! feature space into the continuous IHC feature space, supervised by
//! latent-space and image-space alignment against frozen tokenizers.

mod net;
mod train;

pub use net::{TranslatorConfig, TranslatorNet};
pub use train::{train_translator, TransLossReport, TransTrainConfig, TransTrainReport};

use crate::domain::{FeatureMap, Image};
use crate::nn::NnError;
use crate::scalar::Scalar;

/// Latent-space alignment: mean absolute difference between the
/// predicted and ground-truth IHC feature maps.
pub fn lsa_loss<T: Scalar>(
    pred: &FeatureMap<T>,
    gt: &FeatureMap<T>,
) -> Result<f64, NnError> {
    if pred.data().dim() != gt.data().dim() {
        return Err(NnError::ShapeMismatch {
            context: "lsa_loss",
            details: format!("{:?} vs {:?}", pred.data().dim(), gt.data().dim()),
        });
    }
    let n = pred.data().len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(gt.data().iter())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
        .sum::<f64>()
        / n)
}

/// Image-space alignment: mean absolute pixel difference between the
/// registered IHC image and the decoded prediction.
pub fn isa_loss<T: Scalar>(x_ihc: &Image<T>, decoded_pred: &Image<T>) -> Result<f64, NnError> {
    if x_ihc.data().dim() != decoded_pred.data().dim() {
        return Err(NnError::ShapeMismatch {
            context: "isa_loss",
            details: format!("{:?} vs {:?}", x_ihc.data().dim(), decoded_pred.data().dim()),
        });
    }
    let n = x_ihc.data().len() as f64;
    Ok(x_ihc
        .data()
        .iter()
        .zip(decoded_pred.data().iter())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
        .sum::<f64>()
        / n)
}
