//! Stage (c): structure-conditioned next-scale autoregressive
//! synthesis. The coarse start map derived from the translated
//! features replaces the generic start token; a global context vector
//! modulates every block through adaptive layer normalization; tokens
//! are predicted scale by scale, each scale in parallel given all
//! coarser scales.

mod infer;
mod model;
mod sample;
mod train;

pub use infer::{infer, InferOutput};
pub use model::{SequenceLayout, VarConfig, VarTransformer};
pub use sample::{sample_scale, SampleStrategy};
pub use train::{train_var, VarStage, VarStepReport, VarTrainConfig, VarTrainReport};

use ndarray::{Array1, Array3};

use crate::domain::{FeatureMap, ScaleSchedule};
use crate::rvq::bilinear_resize;
use crate::scalar::Scalar;

/// Coarse spatial prior: the translated feature map resampled to the
/// coarsest scale of the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct StartMap<T: Scalar> {
    data: Array3<T>,
}

impl<T: Scalar> StartMap<T> {
    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.data.dim().1, self.data.dim().2)
    }
}

/// Per-channel global average of the translated feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalContext<T: Scalar> {
    data: Array1<T>,
}

impl<T: Scalar> GlobalContext<T> {
    pub fn data(&self) -> &Array1<T> {
        &self.data
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            data: Array1::zeros(channels),
        }
    }
}

/// Downsamples the translated features to the coarsest schedule scale
/// with the shared corner-aligned bilinear kernel.
pub fn build_start_map<T: Scalar>(
    f_pred: &FeatureMap<T>,
    schedule: &ScaleSchedule,
) -> StartMap<T> {
    let (h1, w1) = schedule.coarsest();
    StartMap {
        data: bilinear_resize(f_pred.data(), h1, w1),
    }
}

/// Global average pooling of the translated features.
pub fn global_context<T: Scalar>(f_pred: &FeatureMap<T>) -> GlobalContext<T> {
    GlobalContext {
        data: Array1::from_vec(f_pred.channel_means()),
    }
}
