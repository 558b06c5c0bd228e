//! The ablation harness: component knock-outs and scale-schedule
//! variants over the synthetic benchmark, with stage reuse wherever an
//! arm shares a prefix of the full pipeline.

use serde::Serialize;

use super::generate::{generate_pair, GenParams};
use super::misalign::{inject_misalignment, realign};
use crate::config::{ExperimentConfig, ScheduleConfig};
use crate::domain::Image;
use crate::pipeline::{
    eval_pair, median, train_pipeline, train_stage_a, train_stage_b, train_stage_c,
    Modality, PipelineError, StageOptions, TrainedPipeline,
};

/// Ablation arms: component knock-outs mirroring the evaluation
/// protocol, plus scale-schedule variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationArm {
    Full,
    WithoutVar,
    WithoutLsa,
    WithoutIsa,
    WithoutDecoderFt,
    WithoutAdv,
    WithoutPixel,
    WithoutGlobalContext,
    WithoutMultiScale,
    WithoutRegistration,
    ScheduleDenseFromOne,
    SchedulePowersOfTwo,
}

impl AblationArm {
    pub fn all() -> Vec<AblationArm> {
        use AblationArm::*;
        vec![
            Full,
            WithoutVar,
            WithoutLsa,
            WithoutIsa,
            WithoutDecoderFt,
            WithoutAdv,
            WithoutPixel,
            WithoutGlobalContext,
            WithoutMultiScale,
            WithoutRegistration,
            ScheduleDenseFromOne,
            SchedulePowersOfTwo,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationArm::Full => "full",
            AblationArm::WithoutVar => "wo_var",
            AblationArm::WithoutLsa => "wo_lsa",
            AblationArm::WithoutIsa => "wo_isa",
            AblationArm::WithoutDecoderFt => "wo_decoder_ft",
            AblationArm::WithoutAdv => "wo_adv",
            AblationArm::WithoutPixel => "wo_pixel",
            AblationArm::WithoutGlobalContext => "wo_global_context",
            AblationArm::WithoutMultiScale => "wo_multiscale",
            AblationArm::WithoutRegistration => "wo_registration",
            AblationArm::ScheduleDenseFromOne => "schedule_dense_1_to_max",
            AblationArm::SchedulePowersOfTwo => "schedule_powers_of_two",
        }
    }

    fn stage_options(&self) -> StageOptions {
        let mut o = StageOptions::default();
        match self {
            AblationArm::WithoutLsa => o.disable_lsa = true,
            AblationArm::WithoutIsa => o.disable_isa = true,
            AblationArm::WithoutDecoderFt => o.freeze_decoder = true,
            AblationArm::WithoutAdv => o.zero_lambda_2 = true,
            AblationArm::WithoutPixel => o.zero_lambda_1 = true,
            AblationArm::WithoutGlobalContext => o.disable_context = true,
            _ => {}
        }
        o
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub psnr_median: f64,
    pub ssim_median: f64,
    pub proxy_median: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Median over seeds of the per-seed median PSNR for one arm.
    pub fn median_psnr(&self, arm: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.arm == arm)
            .map(|r| r.psnr_median)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(median(&vals))
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,seed,psnr_median,ssim_median,proxy_median\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.arm, r.seed, r.psnr_median, r.ssim_median, r.proxy_median
            ));
        }
        out
    }
}

fn gen_pairs(cfg: &ExperimentConfig, seed: u64) -> Vec<(Image<f32>, Image<f32>)> {
    let params = GenParams {
        n_nuclei: cfg.data.n_nuclei,
        image_size: cfg.data.image_size,
        positivity_rate: cfg.data.positivity_rate,
        texture_scale: cfg.data.texture_scale,
    };
    (0..cfg.data.n_train)
        .map(|i| {
            let pair = generate_pair::<f32>(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), &params);
            (pair.x_he, pair.x_ihc)
        })
        .collect()
}

fn eval_greedy(
    pipeline: &TrainedPipeline,
    pairs: &[(Image<f32>, Image<f32>)],
    targets: &[Image<f32>],
) -> Result<(f64, f64, f64), PipelineError> {
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    let mut proxies = Vec::new();
    for ((he, _), gt) in pairs.iter().zip(targets) {
        let out = pipeline.infer(he)?;
        let m = eval_pair(&out.image, gt)?;
        psnrs.push(m.psnr);
        ssims.push(m.ssim);
        proxies.push(m.proxy);
    }
    Ok((median(&psnrs), median(&ssims), median(&proxies)))
}

fn eval_no_var(
    pipeline: &TrainedPipeline,
    pairs: &[(Image<f32>, Image<f32>)],
    targets: &[Image<f32>],
) -> Result<(f64, f64, f64), PipelineError> {
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    let mut proxies = Vec::new();
    for ((he, _), gt) in pairs.iter().zip(targets) {
        let img = pipeline.infer_without_var(he)?;
        let m = eval_pair(&img, gt)?;
        psnrs.push(m.psnr);
        ssims.push(m.ssim);
        proxies.push(m.proxy);
    }
    Ok((median(&psnrs), median(&ssims), median(&proxies)))
}

/// Runs the requested arms over the given seeds. Within one seed,
/// stage-(a) tokenizers are trained once and shared by every arm that
/// leaves them untouched; the no-refinement arm reuses the full arm's
/// first two stages outright.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    arms: &[AblationArm],
) -> Result<AblationReport, PipelineError> {
    let mut report = AblationReport::default();
    for &seed in seeds {
        let mut cfg_seed = cfg.clone();
        cfg_seed.train.seed = seed;
        let pairs = gen_pairs(&cfg_seed, seed);
        let targets: Vec<Image<f32>> = pairs.iter().map(|(_, ihc)| ihc.clone()).collect();

        // Shared stage (a) for arms on registered pairs and the
        // default schedule.
        let he_images: Vec<Image<f32>> = pairs.iter().map(|(he, _)| he.clone()).collect();
        let ihc_images: Vec<Image<f32>> = pairs.iter().map(|(_, ihc)| ihc.clone()).collect();
        let needs_shared = arms.iter().any(|a| {
            !matches!(
                a,
                AblationArm::WithoutMultiScale
                    | AblationArm::WithoutRegistration
                    | AblationArm::ScheduleDenseFromOne
                    | AblationArm::SchedulePowersOfTwo
            )
        });
        let shared_vq = if needs_shared {
            let vq_he = train_stage_a(&cfg_seed, &he_images, Modality::He)?;
            let vq_ihc = train_stage_a(&cfg_seed, &ihc_images, Modality::Ihc)?;
            Some((vq_he, vq_ihc))
        } else {
            None
        };

        // The full arm's pipeline doubles as the no-refinement arm.
        let mut full_pipeline: Option<TrainedPipeline> = None;
        let full_if_needed =
            |shared: &Option<(crate::vqvae::VqVae<f32>, crate::vqvae::VqVae<f32>)>,
             full_pipeline: &mut Option<TrainedPipeline>|
             -> Result<(), PipelineError> {
                if full_pipeline.is_none() {
                    let (vq_he, vq_ihc) = shared.as_ref().expect("shared stage (a) present");
                    let opts = StageOptions::default();
                    let translator =
                        train_stage_b(&cfg_seed, &pairs, vq_he, vq_ihc, &opts)?;
                    let stage =
                        train_stage_c(&cfg_seed, &pairs, vq_he, vq_ihc, &translator, &opts)?;
                    *full_pipeline = Some(TrainedPipeline {
                        vq_he: clone_vqvae(vq_he),
                        vq_ihc: clone_vqvae(vq_ihc),
                        translator,
                        stage,
                    });
                }
                Ok(())
            };

        for arm in arms {
            let (psnr, ssim, proxy) = match arm {
                AblationArm::Full => {
                    full_if_needed(&shared_vq, &mut full_pipeline)?;
                    eval_greedy(full_pipeline.as_ref().unwrap(), &pairs, &targets)?
                }
                AblationArm::WithoutVar => {
                    full_if_needed(&shared_vq, &mut full_pipeline)?;
                    eval_no_var(full_pipeline.as_ref().unwrap(), &pairs, &targets)?
                }
                AblationArm::WithoutLsa
                | AblationArm::WithoutIsa
                | AblationArm::WithoutDecoderFt
                | AblationArm::WithoutAdv
                | AblationArm::WithoutPixel
                | AblationArm::WithoutGlobalContext => {
                    let (vq_he, vq_ihc) = shared_vq.as_ref().expect("shared stage (a)");
                    let opts = arm.stage_options();
                    let translator = train_stage_b(&cfg_seed, &pairs, vq_he, vq_ihc, &opts)?;
                    let stage =
                        train_stage_c(&cfg_seed, &pairs, vq_he, vq_ihc, &translator, &opts)?;
                    let pipeline = TrainedPipeline {
                        vq_he: clone_vqvae(vq_he),
                        vq_ihc: clone_vqvae(vq_ihc),
                        translator,
                        stage,
                    };
                    eval_greedy(&pipeline, &pairs, &targets)?
                }
                AblationArm::WithoutMultiScale => {
                    let mut cfg_arm = cfg_seed.clone();
                    let grid = cfg_arm.grid().0;
                    cfg_arm.schedule = ScheduleConfig {
                        kind: "single".into(),
                        min: grid,
                        max: grid,
                    };
                    let pipeline =
                        train_pipeline(&cfg_arm, &pairs, &StageOptions::default())?;
                    eval_greedy(&pipeline, &pairs, &targets)?
                }
                AblationArm::ScheduleDenseFromOne => {
                    let mut cfg_arm = cfg_seed.clone();
                    cfg_arm.schedule = ScheduleConfig {
                        kind: "dense".into(),
                        min: 1,
                        max: cfg_arm.grid().0,
                    };
                    let pipeline =
                        train_pipeline(&cfg_arm, &pairs, &StageOptions::default())?;
                    eval_greedy(&pipeline, &pairs, &targets)?
                }
                AblationArm::SchedulePowersOfTwo => {
                    let mut cfg_arm = cfg_seed.clone();
                    cfg_arm.schedule = ScheduleConfig {
                        kind: "powers".into(),
                        min: 1,
                        max: cfg_arm.grid().0,
                    };
                    let pipeline =
                        train_pipeline(&cfg_arm, &pairs, &StageOptions::default())?;
                    eval_greedy(&pipeline, &pairs, &targets)?
                }
                AblationArm::WithoutRegistration => {
                    // Train on warped supervision; evaluate against the
                    // re-aligned target so only the supervision noise
                    // differs from the full arm.
                    let mut warped_pairs = Vec::with_capacity(pairs.len());
                    let mut realigned_targets = Vec::with_capacity(pairs.len());
                    for (i, (he, ihc)) in pairs.iter().enumerate() {
                        let (warped, mis) = inject_misalignment(
                            ihc,
                            cfg_seed.data.misalign_magnitude.max(2.0),
                            seed.wrapping_add(i as u64),
                        );
                        realigned_targets.push(realign(&warped, &mis));
                        warped_pairs.push((he.clone(), warped));
                    }
                    let pipeline =
                        train_pipeline(&cfg_seed, &warped_pairs, &StageOptions::default())?;
                    eval_greedy(&pipeline, &warped_pairs, &realigned_targets)?
                }
            };
            report.rows.push(AblationRow {
                arm: arm.name().to_string(),
                seed,
                psnr_median: psnr,
                ssim_median: ssim,
                proxy_median: proxy,
            });
        }
    }
    Ok(report)
}

/// Rebuilds a tokenizer value for a pipeline struct (the originals stay
/// cached for other arms).
fn clone_vqvae(vq: &crate::vqvae::VqVae<f32>) -> crate::vqvae::VqVae<f32> {
    let mut fresh = crate::vqvae::VqVae::new(vq.cfg.clone(), 0);
    let ckpt = crate::checkpoint::Checkpoint::from_model("vqvae", vq);
    for t in &ckpt.tensors {
        let arr = ckpt.tensor_array::<f32>(&t.name).expect("tensor present");
        assert!(fresh.set_tensor(&t.name, arr), "unknown tensor {}", t.name);
    }
    fresh
}
