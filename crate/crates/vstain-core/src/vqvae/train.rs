//! Stage (a): tokenizer training with straight-through gradients,
//! EMA codebook updates, and a separately stepped discriminator.

use ndarray::{Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{vq_loss_op, VqLossReport};
use super::rvq_op::rvq_encode_op;
use super::VqVae;
use crate::domain::{Image, LossWeights};
use crate::nn::{Adam, NnError, Tape};
use crate::rvq::bilinear_resize;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VqTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 1e-4,
            seed: 7,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct VqTrainReport {
    /// Generator-side composite loss per step.
    pub steps: Vec<VqLossReport>,
    /// Discriminator loss per step.
    pub disc: Vec<f64>,
}

fn stack_images<T: Scalar>(images: &[&Image<T>]) -> ArrayD<T> {
    let arrs: Vec<_> = images.iter().map(|img| img.data().clone()).collect();
    crate::nn::util::stack3(&arrs)
}

/// Trains one modality's tokenizer. Deterministic for a fixed seed.
pub fn train_vqvae<T: Scalar>(
    model: &mut VqVae<T>,
    images: &[Image<T>],
    cfg: &VqTrainConfig,
) -> Result<VqTrainReport, NnError> {
    assert!(!images.is_empty(), "dataset must be non-empty");
    let mut report = VqTrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37));
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7f4a));
    let mut opt_gen = Adam::new(cfg.lr);
    let mut opt_disc = Adam::new(cfg.lr);

    // Data-dependent codebook init from the first batch's encoder
    // features, resampled at every schedule scale.
    {
        let first: Vec<&Image<T>> = images.iter().take(cfg.batch_size.max(1)).collect();
        let mut pool_rows: Vec<Vec<T>> = Vec::new();
        for img in &first {
            let f = model.encode_image(img)?;
            for &(h, w) in model.cfg.schedule.scales() {
                let down = bilinear_resize(f.data(), h, w);
                for y in 0..h {
                    for x in 0..w {
                        pool_rows.push((0..f.channels()).map(|c| down[[c, y, x]]).collect());
                    }
                }
            }
        }
        let pool = Array2::from_shape_fn((pool_rows.len(), model.cfg.latent_channels), |(i, j)| {
            pool_rows[i][j]
        });
        model.init_codebook_from_pool(&pool, &mut init_rng);
    }

    let mut step = 0usize;
    for _epoch in 0..cfg.epochs {
        let order = crate::nn::util::shuffled_indices(images.len(), &mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_imgs: Vec<&Image<T>> = chunk.iter().map(|&i| &images[i]).collect();
            let batch = stack_images(&batch_imgs);

            // Generator pass: encoder, quantizer, decoder, frozen critic.
            let mut tape = Tape::<T>::new();
            let x = tape.constant(batch.clone());
            let f = model.encode_tape(&mut tape, x, true);
            let codebook = model.codebook_domain();
            let rvq = rvq_encode_op(
                &mut tape,
                f,
                &codebook,
                &model.cfg.schedule,
                &model.projections,
                true,
            );
            let x_hat = model.decode_tape(&mut tape, rvq.aggregate, true, true, &mut dropout_rng);
            let fake_logits = model.discriminator.forward(&mut tape, x_hat, false).logits;
            let (total, step_report) = vq_loss_op(
                &mut tape,
                x,
                x_hat,
                f,
                rvq.aggregate,
                fake_logits,
                &cfg.weights,
            );
            if !step_report.total.is_finite() {
                return Err(NnError::Diverged {
                    step,
                    loss: step_report.total,
                });
            }
            let grads = tape.backward(total);
            let by_name = tape.param_grads(&grads);
            opt_gen.step(model, &by_name);
            model.ema_update(&rvq.quantizer_inputs, &rvq.tokens);
            let x_hat_value = tape.value(x_hat).clone();
            report.steps.push(step_report);

            // Discriminator pass on the detached reconstruction.
            let mut dtape = Tape::<T>::new();
            let real = dtape.constant(batch);
            let fake = dtape.constant(x_hat_value);
            let real_logits = model.discriminator.forward(&mut dtape, real, true).logits;
            let fake_logits = model.discriminator.forward(&mut dtape, fake, true).logits;
            let neg_real = dtape.scale(real_logits, -1.0);
            let sp_r = dtape.softplus(neg_real);
            let term_r = dtape.mean_all(sp_r);
            let sp_f = dtape.softplus(fake_logits);
            let term_f = dtape.mean_all(sp_f);
            let d_loss = dtape.add(term_r, term_f);
            let d_val = dtape.scalar(d_loss).as_f64();
            if !d_val.is_finite() {
                return Err(NnError::Diverged { step, loss: d_val });
            }
            let d_grads = dtape.backward(d_loss);
            let d_by_name = dtape.param_grads(&d_grads);
            opt_disc.step(model, &d_by_name);
            report.disc.push(d_val);

            step += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_cfg;
    use super::*;
    use crate::nn::param_hash;
    use ndarray::Array3;

    fn toy_images(n: usize) -> Vec<Image<f32>> {
        (0..n)
            .map(|i| {
                Image::new(Array3::from_shape_fn((3, 32, 32), |(c, y, x)| {
                    let phase = i as f32 * 0.8;
                    (0.5 + 0.4 * ((c as f32 + phase + 0.2 * y as f32 + 0.13 * x as f32).sin()))
                        .clamp(0.0, 1.0)
                }))
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leaves_model_at_initialization() {
        let mut a = VqVae::<f32>::new(tiny_cfg(), 11);
        let b = VqVae::<f32>::new(tiny_cfg(), 11);
        let images = toy_images(4);
        let cfg = VqTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        train_vqvae(&mut a, &images, &cfg).unwrap();
        assert_eq!(param_hash(&a), param_hash(&b));
    }

    #[test]
    fn same_seed_twice_gives_identical_parameters() {
        let images = toy_images(4);
        let cfg = VqTrainConfig {
            epochs: 2,
            batch_size: 2,
            lr: 1e-3,
            seed: 5,
            weights: LossWeights::default(),
        };
        let mut a = VqVae::<f32>::new(tiny_cfg(), 11);
        let mut b = VqVae::<f32>::new(tiny_cfg(), 11);
        let ra = train_vqvae(&mut a, &images, &cfg).unwrap();
        let rb = train_vqvae(&mut b, &images, &cfg).unwrap();
        assert_eq!(param_hash(&a), param_hash(&b));
        assert_eq!(ra.steps.len(), rb.steps.len());
        for (x, y) in ra.steps.iter().zip(rb.steps.iter()) {
            assert_eq!(x.total, y.total);
        }
    }

    #[test]
    fn reconstruction_loss_decreases_on_a_small_overfit() {
        let images = toy_images(4);
        let cfg = VqTrainConfig {
            epochs: 12,
            batch_size: 4,
            lr: 2e-3,
            seed: 3,
            weights: LossWeights::default(),
        };
        let mut vq = VqVae::<f32>::new(tiny_cfg(), 2);
        let report = train_vqvae(&mut vq, &images, &cfg).unwrap();
        let first = report.steps.first().unwrap().rec;
        let last = report.steps.last().unwrap().rec;
        assert!(
            last < first,
            "rec loss should fall: first {first}, last {last}"
        );
    }
}
