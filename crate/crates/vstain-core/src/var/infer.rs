//! End-to-end inference: H&E in, synthesized IHC out.

use ndarray::{Array2, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::stack_rows;
use super::sample::{sample_scale, SampleStrategy};
use super::train::VarStage;
use super::{build_start_map, global_context};
use crate::domain::{FeatureMap, Image, TokenPyramid};
use crate::nn::{NnError, Tape};
use crate::rvq::aggregate_reconstruct;
use crate::scalar::Scalar;
use crate::translator::TranslatorNet;
use crate::vqvae::VqVae;

pub struct InferOutput<T: Scalar> {
    pub image: Image<T>,
    pub pyramid: TokenPyramid,
    pub f_pred: FeatureMap<T>,
}

/// Full pipeline: encode and quantize the H&E image, translate into
/// the IHC feature space, derive the start map and global context,
/// sample tokens scale by scale, and decode with the fine-tuned
/// decoder. Greedy sampling makes the whole path deterministic.
pub fn infer<T: Scalar>(
    x_he: &Image<T>,
    vq_he: &VqVae<T>,
    translator: &TranslatorNet<T>,
    vq_ihc: &VqVae<T>,
    stage: &VarStage<T>,
    strategy: SampleStrategy,
    seed: u64,
) -> Result<InferOutput<T>, NnError> {
    let schedule = stage.transformer.cfg.schedule.clone();
    let k_scales = schedule.num_scales();
    let codebook = vq_ihc.codebook_domain();
    let proj = vq_ihc.scale_projection();
    let grid = vq_ihc.cfg.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let fhat_he = vq_he.tokenize(x_he)?.aggregate;
    let f_pred = translator.translate(&FeatureMap::new(fhat_he).expect("finite aggregate"))?;
    let start = build_start_map(&f_pred, &schedule);
    let ctx = global_context(&f_pred);

    let mut sampled: Vec<Array2<u32>> = Vec::with_capacity(k_scales);
    for k in 0..k_scales {
        let rows = stage
            .transformer
            .build_input_rows(&start, &sampled, &codebook, &proj);
        let (l, c) = rows.dim();
        let mut tape = Tape::<T>::no_grad();
        let inputs = tape.constant(
            stack_rows(&[rows])
                .into_shape_with_order(IxDyn(&[1, l, c]))
                .unwrap(),
        );
        let ctxv = tape.constant(
            ctx.data()
                .clone()
                .into_shape_with_order(IxDyn(&[1, c]))
                .unwrap(),
        );
        let logits = stage
            .transformer
            .forward_seq(&mut tape, inputs, ctxv, k + 1, false);
        let lv = tape.value(logits);
        let (start_at, len) = stage.transformer.layout.blocks[k];
        let v = stage.transformer.cfg.vocab;
        let block = Array2::from_shape_fn((len, v), |(i, j)| lv[[0, start_at + i, j]]);
        let idx = sample_scale(&block, strategy, &mut rng).map_err(|details| {
            NnError::ShapeMismatch {
                context: "sample_scale",
                details,
            }
        })?;
        let (h, w) = schedule.scales()[k];
        sampled.push(Array2::from_shape_vec((h, w), idx).unwrap());
    }

    let pyramid = TokenPyramid::new(
        schedule,
        sampled,
        codebook.content_hash(),
        codebook.size(),
    )
    .expect("sampled tokens in range");
    let fhat = aggregate_reconstruct(&pyramid, &codebook, &proj, grid).expect("bound decode");
    let image = stage.decode(&FeatureMap::new(fhat).expect("finite aggregate"))?;
    Ok(InferOutput {
        image,
        pyramid,
        f_pred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScaleSchedule;
    use crate::translator::TranslatorConfig;
    use crate::var::{VarConfig, VarTransformer};
    use crate::vqvae::VqVaeConfig;
    use ndarray::Array3;

    fn tiny_vq(seed: u64) -> VqVae<f32> {
        VqVae::new(
            VqVaeConfig {
                image_size: 32,
                base_channels: 8,
                latent_channels: 4,
                num_down: 2,
                groups: 4,
                vocab: 16,
                schedule: ScaleSchedule::new(vec![(4, 4), (8, 8)]),
                dropout: 0.0,
                ema_decay: 0.99,
                disc_base: 4,
            },
            seed,
        )
    }

    fn tiny_stage(vq_ihc: &VqVae<f32>) -> VarStage<f32> {
        let var_cfg = VarConfig {
            dim: 16,
            layers: 1,
            heads: 2,
            mlp_ratio: 2,
            vocab: 16,
            latent_channels: 4,
            schedule: ScaleSchedule::new(vec![(4, 4), (8, 8)]),
            grid: (8, 8),
        };
        VarStage::new(VarTransformer::new(var_cfg, 21), vq_ihc, 4, 22)
    }

    #[test]
    fn greedy_inference_is_bitwise_deterministic_and_size_preserving() {
        let vq_he = tiny_vq(1);
        let vq_ihc = tiny_vq(2);
        let translator = TranslatorNet::<f32>::new(
            TranslatorConfig {
                channels: 4,
                base: 8,
                groups: 4,
            },
            3,
        );
        let stage = tiny_stage(&vq_ihc);
        let he = Image::new(Array3::from_shape_fn((3, 32, 32), |(c, y, x)| {
            (0.5 + 0.4 * ((c + y) as f32 * 0.2 + x as f32 * 0.15).sin()).clamp(0.0, 1.0)
        }))
        .unwrap();
        let a = infer(
            &he,
            &vq_he,
            &translator,
            &vq_ihc,
            &stage,
            SampleStrategy::Greedy,
            0,
        )
        .unwrap();
        let b = infer(
            &he,
            &vq_he,
            &translator,
            &vq_ihc,
            &stage,
            SampleStrategy::Greedy,
            99,
        )
        .unwrap();
        assert_eq!(a.image.data(), b.image.data(), "greedy ignores the seed");
        assert_eq!(a.pyramid, b.pyramid);
        assert_eq!((a.image.height(), a.image.width()), (32, 32));
        // Token dump is bound to the IHC codebook.
        assert_eq!(a.pyramid.codebook_hash(), vq_ihc.codebook_domain().content_hash());
    }

    #[test]
    fn seeded_temperature_sampling_reproduces_itself() {
        let vq_he = tiny_vq(1);
        let vq_ihc = tiny_vq(2);
        let translator = TranslatorNet::<f32>::new(
            TranslatorConfig {
                channels: 4,
                base: 8,
                groups: 4,
            },
            3,
        );
        let stage = tiny_stage(&vq_ihc);
        let he = Image::new(Array3::from_elem((3, 32, 32), 0.5f32)).unwrap();
        let run = |seed| {
            infer(
                &he,
                &vq_he,
                &translator,
                &vq_ihc,
                &stage,
                SampleStrategy::Temperature(1.0),
                seed,
            )
            .unwrap()
        };
        assert_eq!(run(5).pyramid, run(5).pyramid);
    }
}
