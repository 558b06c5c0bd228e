//! Stage (c) training: teacher-forced cross-entropy over all scales,
//! plus pixel and adversarial supervision through the fine-tuned
//! decoder on the greedily decoded token hierarchy.

use ndarray::{Array2, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{stack_rows, VarTransformer};
use super::sample::{sample_scale, SampleStrategy};
use super::{build_start_map, global_context, GlobalContext};
use crate::domain::{Image, TokenPyramid};
use crate::nn::{param_hash, Adam, NnError, ParamVisit, Tape};
use crate::rvq::aggregate_reconstruct;
use crate::scalar::Scalar;
use crate::translator::TranslatorNet;
use crate::vqvae::{DecoderNet, Discriminator, VqVae};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    /// Keep the decoder copy frozen (ablation arm).
    pub freeze_decoder: bool,
    /// Replace the global context with zeros (ablation arm).
    pub disable_context: bool,
}

impl Default for VarTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            lr: 1e-4,
            seed: 7,
            lambda_1: 1.0,
            lambda_2: 0.3,
            freeze_decoder: false,
            disable_context: false,
        }
    }
}

/// The trainable bundle of stage (c): the transformer, the unfrozen
/// decoder copy, and the stage's own discriminator.
pub struct VarStage<T: Scalar> {
    pub transformer: VarTransformer<T>,
    pub decoder_ft: DecoderNet<T>,
    pub disc: Discriminator<T>,
    /// Dropout is inactive here; the decoder runs in eval mode.
    pub decoder_latent_channels: usize,
}

impl<T: Scalar> VarStage<T> {
    /// Builds the stage from the frozen IHC tokenizer: the decoder copy
    /// starts bit-identical to the frozen decoder.
    pub fn new(
        transformer: VarTransformer<T>,
        vq_ihc: &VqVae<T>,
        disc_base: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            transformer,
            decoder_ft: vq_ihc.decoder.clone(),
            disc: Discriminator::new("cdisc", disc_base, &mut rng),
            decoder_latent_channels: vq_ihc.cfg.latent_channels,
        }
    }

    /// Eval decode of one feature map through the fine-tuned decoder.
    pub fn decode(&self, f: &crate::domain::FeatureMap<T>) -> Result<Image<T>, NnError> {
        if f.channels() != self.decoder_latent_channels {
            return Err(NnError::ShapeMismatch {
                context: "decoder_ft",
                details: format!("{} channels", f.channels()),
            });
        }
        let (c, h, w) = f.data().dim();
        let mut tape = Tape::no_grad();
        let x = tape.constant(
            f.data()
                .to_owned()
                .into_shape_with_order(IxDyn(&[1, c, h, w]))
                .unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = self.decoder_ft.forward(&mut tape, x, false, 0.0, &mut rng);
        let v = tape.value(y);
        let dims = v.shape().to_vec();
        let arr = v
            .to_owned()
            .into_shape_with_order(IxDyn(&dims[1..]))
            .unwrap()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        Image::new(arr).map_err(|_| NnError::NonFinite {
            context: "fine-tuned decoder output",
        })
    }
}

impl<T: Scalar> ParamVisit<T> for VarStage<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ndarray::ArrayD<T>)) {
        self.transformer.visit(f);
        self.decoder_ft.visit(f);
        self.disc.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        self.transformer.visit_mut(f);
        self.decoder_ft.visit_mut(f);
        self.disc.visit_mut(f);
    }
}

/// Transformer + decoder copy as one optimizable unit (the stage's
/// discriminator is stepped separately).
struct GeneratorSide<'a, T: Scalar>(&'a mut VarStage<T>);

impl<T: Scalar> ParamVisit<T> for GeneratorSide<'_, T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ndarray::ArrayD<T>)) {
        self.0.transformer.visit(f);
        self.0.decoder_ft.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        self.0.transformer.visit_mut(f);
        self.0.decoder_ft.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarStepReport {
    pub ce: f64,
    pub pixel: f64,
    pub adv: f64,
    pub total: f64,
    pub per_scale_ce: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct VarTrainReport {
    pub steps: Vec<VarStepReport>,
    pub disc: Vec<f64>,
}

/// Per-scale mean cross-entropy from raw logits values.
fn per_scale_ce_of<T: Scalar>(
    logits: &ndarray::ArrayD<T>,
    targets: &[Vec<usize>],
    layout: &super::SequenceLayout,
) -> Vec<f64> {
    let n = logits.shape()[0];
    let v = logits.shape()[2];
    layout
        .blocks
        .iter()
        .map(|&(start, len)| {
            let mut total = 0.0;
            for ni in 0..n {
                for i in 0..len {
                    let row: Vec<f64> =
                        (0..v).map(|j| logits[[ni, start + i, j]].as_f64()).collect();
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
                    total += lse - row[targets[ni][start + i]];
                }
            }
            total / (n * len) as f64
        })
        .collect()
}

/// Trains the stage on registered pairs against frozen tokenizers and
/// a frozen translator (hash-checked).
pub fn train_var<T: Scalar>(
    stage: &mut VarStage<T>,
    pairs: &[(Image<T>, Image<T>)],
    vq_he: &VqVae<T>,
    vq_ihc: &VqVae<T>,
    translator: &TranslatorNet<T>,
    cfg: &VarTrainConfig,
) -> Result<VarTrainReport, NnError> {
    assert!(!pairs.is_empty(), "dataset must be non-empty");
    let frozen_hashes = (
        param_hash(vq_he),
        param_hash(vq_ihc),
        param_hash(translator),
    );
    let schedule = stage.transformer.cfg.schedule.clone();
    let k_scales = schedule.num_scales();
    let codebook = vq_ihc.codebook_domain();
    let proj = vq_ihc.scale_projection();
    let grid = vq_ihc.cfg.grid();
    let c_latent = stage.transformer.cfg.latent_channels;

    // Frozen precomputation: teacher inputs, targets, context vectors,
    // and pixel targets are constant across epochs.
    let mut seq_inputs = Vec::with_capacity(pairs.len());
    let mut ctx_vecs = Vec::with_capacity(pairs.len());
    let mut targets_flat = Vec::with_capacity(pairs.len());
    let mut pixels = Vec::with_capacity(pairs.len());
    for (he, ihc) in pairs {
        let fhat_he = vq_he.tokenize(he)?.aggregate;
        let f_pred = translator.translate(
            &crate::domain::FeatureMap::new(fhat_he).expect("finite aggregate"),
        )?;
        let start = build_start_map(&f_pred, &schedule);
        let ctx = if cfg.disable_context {
            GlobalContext::zeros(c_latent)
        } else {
            global_context(&f_pred)
        };
        let enc = vq_ihc.tokenize(ihc)?;
        let rows = stage.transformer.build_input_rows(
            &start,
            &enc.pyramid.indices()[..k_scales - 1],
            &codebook,
            &proj,
        );
        seq_inputs.push(rows);
        ctx_vecs.push(ctx.data().clone());
        let mut flat = Vec::with_capacity(stage.transformer.layout.total);
        for g in enc.pyramid.indices() {
            flat.extend(g.iter().map(|&t| t as usize));
        }
        targets_flat.push(flat);
        pixels.push(ihc.data().clone());
    }

    let mut report = VarTrainReport::default();
    if cfg.epochs > 0 {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x33));
        let mut opt_gen = Adam::new(cfg.lr);
        let mut opt_disc = Adam::new(cfg.lr);
        let mut step = 0usize;
        let layout = stage.transformer.layout.clone();

        for _epoch in 0..cfg.epochs {
            let order = crate::nn::util::shuffled_indices(pairs.len(), &mut shuffle_rng);
            for chunk in order.chunks(cfg.batch_size) {
                let n = chunk.len();
                let in_rows: Vec<Array2<T>> =
                    chunk.iter().map(|&i| seq_inputs[i].clone()).collect();
                let inputs3 = stack_rows(&in_rows);
                let mut ctx2 = Array2::<T>::zeros((n, c_latent));
                for (bi, &i) in chunk.iter().enumerate() {
                    ctx2.row_mut(bi).assign(&ctx_vecs[i]);
                }
                let batch_targets: Vec<Vec<usize>> =
                    chunk.iter().map(|&i| targets_flat[i].clone()).collect();
                let mut flat_targets = Vec::with_capacity(n * layout.total);
                for t in &batch_targets {
                    flat_targets.extend_from_slice(t);
                }

                let mut tape = Tape::<T>::new();
                let inputs = tape.constant(inputs3.clone().into_dyn());
                let ctx = tape.constant(ctx2.clone().into_dyn());
                let logits =
                    stage
                        .transformer
                        .forward_seq(&mut tape, inputs, ctx, k_scales, true);
                let v = stage.transformer.cfg.vocab;
                let flat_logits = tape.reshape(logits, &[n * layout.total, v]);
                let ce = tape.cross_entropy(flat_logits, &flat_targets);
                let per_scale = per_scale_ce_of(tape.value(logits), &batch_targets, &layout);

                // Greedy decode of the predicted hierarchy, through the
                // fine-tuned decoder. Tokens are discrete: gradients
                // from the image losses reach the decoder (and the
                // discriminator), not the transformer.
                let logits_val = tape.value(logits).clone();
                let mut decoded_feats = Vec::with_capacity(n);
                for ni in 0..n {
                    let mut grids = Vec::with_capacity(k_scales);
                    for (b, &(start_at, len)) in layout.blocks.iter().enumerate() {
                        let block = Array2::from_shape_fn((len, v), |(i, j)| {
                            logits_val[[ni, start_at + i, j]]
                        });
                        let idx =
                            sample_scale(&block, SampleStrategy::Greedy, &mut sample_rng)
                                .expect("greedy cannot fail");
                        let (h, w) = schedule.scales()[b];
                        grids.push(
                            Array2::from_shape_vec(
                                (h, w),
                                idx,
                            )
                            .unwrap(),
                        );
                    }
                    let pyramid = TokenPyramid::new(
                        schedule.clone(),
                        grids,
                        codebook.content_hash(),
                        codebook.size(),
                    )
                    .expect("greedy tokens in range");
                    let fhat = aggregate_reconstruct(&pyramid, &codebook, &proj, grid)
                        .expect("hash-bound decode");
                    decoded_feats.push(fhat);
                }
                let fhat_batch = crate::nn::util::stack3(&decoded_feats);
                let fhat_const = tape.constant(fhat_batch);
                let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
                let x_hat = stage.decoder_ft.forward(
                    &mut tape,
                    fhat_const,
                    !cfg.freeze_decoder,
                    0.0,
                    &mut drop_rng,
                );
                let px: Vec<_> = chunk.iter().map(|&i| pixels[i].clone()).collect();
                let x_ihc = tape.constant(crate::nn::util::stack3(&px));
                let pixel = tape.l1(x_ihc, x_hat);

                let (adv_val, total) = if cfg.lambda_2 > 0.0 {
                    let fake_logits = stage.disc.forward(&mut tape, x_hat, false).logits;
                    let neg = tape.scale(fake_logits, -1.0);
                    let sp = tape.softplus(neg);
                    let adv = tape.mean_all(sp);
                    let total = tape.weighted_sum(&[
                        (ce, 1.0),
                        (pixel, cfg.lambda_1),
                        (adv, cfg.lambda_2),
                    ]);
                    (tape.scalar(adv).as_f64(), total)
                } else {
                    let total =
                        tape.weighted_sum(&[(ce, 1.0), (pixel, cfg.lambda_1)]);
                    (0.0, total)
                };

                let step_report = VarStepReport {
                    ce: tape.scalar(ce).as_f64(),
                    pixel: tape.scalar(pixel).as_f64(),
                    adv: adv_val,
                    total: tape.scalar(total).as_f64(),
                    per_scale_ce: per_scale,
                };
                if !step_report.total.is_finite() {
                    return Err(NnError::Diverged {
                        step,
                        loss: step_report.total,
                    });
                }
                let grads = tape.backward(total);
                let by_name = tape.param_grads(&grads);
                opt_gen.step(&mut GeneratorSide(stage), &by_name);
                let x_hat_value = tape.value(x_hat).clone();
                report.steps.push(step_report);

                // Stage discriminator update on the detached decode.
                if cfg.lambda_2 > 0.0 {
                    let mut dtape = Tape::<T>::new();
                    let real = dtape.constant(crate::nn::util::stack3(&px));
                    let fake = dtape.constant(x_hat_value);
                    let rl = stage.disc.forward(&mut dtape, real, true).logits;
                    let fl = stage.disc.forward(&mut dtape, fake, true).logits;
                    let neg_r = dtape.scale(rl, -1.0);
                    let sp_r = dtape.softplus(neg_r);
                    let tr = dtape.mean_all(sp_r);
                    let sp_f = dtape.softplus(fl);
                    let tf = dtape.mean_all(sp_f);
                    let d_loss = dtape.add(tr, tf);
                    let d_val = dtape.scalar(d_loss).as_f64();
                    if !d_val.is_finite() {
                        return Err(NnError::Diverged { step, loss: d_val });
                    }
                    let d_grads = dtape.backward(d_loss);
                    let d_by_name = dtape.param_grads(&d_grads);
                    opt_disc.step(&mut stage.disc, &d_by_name);
                    report.disc.push(d_val);
                }
                step += 1;
            }
        }
    }
    if frozen_hashes
        != (
            param_hash(vq_he),
            param_hash(vq_ihc),
            param_hash(translator),
        )
    {
        return Err(NnError::ShapeMismatch {
            context: "train_var",
            details: "frozen stage parameters drifted".into(),
        });
    }
    Ok(report)
}
