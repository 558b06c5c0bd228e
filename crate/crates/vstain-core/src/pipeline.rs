//! Stage orchestration: builds models from an [`ExperimentConfig`],
//! runs the three training stages in order, and evaluates the full
//! inference path.

use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::domain::Image;
use crate::metrics;
use crate::nn::NnError;
use crate::translator::{train_translator, TransTrainConfig, TranslatorNet};
use crate::var::{
    infer, train_var, SampleStrategy, VarStage, VarTrainConfig, VarTransformer,
};
use crate::vqvae::{train_vqvae, VqTrainConfig, VqVae};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] NnError),
    #[error("metric: {0}")]
    Metric(String),
}

/// Which modality a tokenizer serves; fixes its seed stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    He,
    Ihc,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::He => "he",
            Modality::Ihc => "ihc",
        }
    }

    fn seed_offset(self) -> u64 {
        match self {
            Modality::He => 1000,
            Modality::Ihc => 2000,
        }
    }
}

/// Per-arm switches for ablation runs. Everything on = the full model.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageOptions {
    pub disable_lsa: bool,
    pub disable_isa: bool,
    pub freeze_decoder: bool,
    pub zero_lambda_1: bool,
    pub zero_lambda_2: bool,
    pub disable_context: bool,
}

pub struct TrainedPipeline {
    pub vq_he: VqVae<f32>,
    pub vq_ihc: VqVae<f32>,
    pub translator: TranslatorNet<f32>,
    pub stage: VarStage<f32>,
}

pub fn train_stage_a(
    cfg: &ExperimentConfig,
    images: &[Image<f32>],
    modality: Modality,
) -> Result<VqVae<f32>, PipelineError> {
    let vq_cfg = cfg.vq_config().map_err(PipelineError::Config)?;
    let seed = cfg.train.seed.wrapping_add(modality.seed_offset());
    let mut model = VqVae::new(vq_cfg, seed);
    let train_cfg = VqTrainConfig {
        epochs: cfg.train.epochs_vqvae,
        batch_size: cfg.train.batch_size,
        lr: cfg.train.lr,
        seed,
        weights: cfg.weights,
    };
    train_vqvae(&mut model, images, &train_cfg)?;
    Ok(model)
}

pub fn train_stage_b(
    cfg: &ExperimentConfig,
    pairs: &[(Image<f32>, Image<f32>)],
    vq_he: &VqVae<f32>,
    vq_ihc: &VqVae<f32>,
    opts: &StageOptions,
) -> Result<TranslatorNet<f32>, PipelineError> {
    let seed = cfg.train.seed.wrapping_add(3000);
    let mut translator = TranslatorNet::new(cfg.translator_config(), seed);
    let train_cfg = TransTrainConfig {
        epochs: cfg.train.epochs_translator,
        batch_size: cfg.train.batch_size,
        lr: cfg.train.lr,
        seed,
        lambda_trans: cfg.weights.lambda_trans,
        disable_lsa: opts.disable_lsa,
        disable_isa: opts.disable_isa,
    };
    train_translator(&mut translator, pairs, vq_he, vq_ihc, &train_cfg)?;
    Ok(translator)
}

pub fn train_stage_c(
    cfg: &ExperimentConfig,
    pairs: &[(Image<f32>, Image<f32>)],
    vq_he: &VqVae<f32>,
    vq_ihc: &VqVae<f32>,
    translator: &TranslatorNet<f32>,
    opts: &StageOptions,
) -> Result<VarStage<f32>, PipelineError> {
    let seed = cfg.train.seed.wrapping_add(4000);
    let var_cfg = cfg.var_config().map_err(PipelineError::Config)?;
    let transformer = VarTransformer::new(var_cfg, seed);
    let mut stage = VarStage::new(transformer, vq_ihc, cfg.model.disc_base, seed);
    let train_cfg = VarTrainConfig {
        epochs: cfg.train.epochs_var,
        batch_size: cfg.train.batch_size,
        lr: cfg.train.lr,
        seed,
        lambda_1: if opts.zero_lambda_1 {
            0.0
        } else {
            cfg.weights.lambda_1
        },
        lambda_2: if opts.zero_lambda_2 {
            0.0
        } else {
            cfg.weights.lambda_2
        },
        freeze_decoder: opts.freeze_decoder,
        disable_context: opts.disable_context,
    };
    train_var(&mut stage, pairs, vq_he, vq_ihc, translator, &train_cfg)?;
    Ok(stage)
}

/// All three stages in order.
pub fn train_pipeline(
    cfg: &ExperimentConfig,
    pairs: &[(Image<f32>, Image<f32>)],
    opts: &StageOptions,
) -> Result<TrainedPipeline, PipelineError> {
    let he_images: Vec<Image<f32>> = pairs.iter().map(|(he, _)| he.clone()).collect();
    let ihc_images: Vec<Image<f32>> = pairs.iter().map(|(_, ihc)| ihc.clone()).collect();
    let vq_he = train_stage_a(cfg, &he_images, Modality::He)?;
    let vq_ihc = train_stage_a(cfg, &ihc_images, Modality::Ihc)?;
    let translator = train_stage_b(cfg, pairs, &vq_he, &vq_ihc, opts)?;
    let stage = train_stage_c(cfg, pairs, &vq_he, &vq_ihc, &translator, opts)?;
    Ok(TrainedPipeline {
        vq_he,
        vq_ihc,
        translator,
        stage,
    })
}

impl TrainedPipeline {
    /// Full greedy inference for one H&E image.
    pub fn infer(&self, x_he: &Image<f32>) -> Result<crate::var::InferOutput<f32>, PipelineError> {
        Ok(infer(
            x_he,
            &self.vq_he,
            &self.translator,
            &self.vq_ihc,
            &self.stage,
            SampleStrategy::Greedy,
            0,
        )?)
    }

    /// The no-refinement baseline: translate and decode with the
    /// frozen stage-(a) decoder, skipping token sampling entirely.
    pub fn infer_without_var(&self, x_he: &Image<f32>) -> Result<Image<f32>, PipelineError> {
        let fhat = self.vq_he.tokenize(x_he)?.aggregate;
        let f_pred = self.translator.translate(
            &crate::domain::FeatureMap::new(fhat).expect("finite aggregate"),
        )?;
        Ok(self.vq_ihc.decode_features(&f_pred)?)
    }
}

/// PSNR, SSIM, and the perceptual proxy for one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub proxy: f64,
}

pub fn eval_pair(pred: &Image<f32>, gt: &Image<f32>) -> Result<PairMetrics, PipelineError> {
    Ok(PairMetrics {
        psnr: metrics::psnr(pred, gt).map_err(|e| PipelineError::Metric(e.to_string()))?,
        ssim: metrics::ssim(pred, gt).map_err(|e| PipelineError::Metric(e.to_string()))?,
        proxy: metrics::perceptual_proxy(pred, gt)
            .map_err(|e| PipelineError::Metric(e.to_string()))?,
    })
}

/// Median of already-computed values (averages the middle two on even
/// counts; infinities sort last).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaNs in metrics"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_odd_even_and_infinite() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, 2.0]), 2.0);
    }
}
