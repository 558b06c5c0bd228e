//! Stage (b) training against frozen tokenizers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TranslatorNet;
use crate::domain::Image;
use crate::nn::{param_hash, Adam, NnError, Tape};
use crate::scalar::Scalar;
use crate::vqvae::VqVae;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub lambda_trans: f64,
    /// Drop the latent alignment term (ablation arm).
    pub disable_lsa: bool,
    /// Drop the image alignment term (ablation arm).
    pub disable_isa: bool,
}

impl Default for TransTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            lr: 1e-4,
            seed: 7,
            lambda_trans: 3.0,
            disable_lsa: false,
            disable_isa: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransLossReport {
    pub lsa: f64,
    pub isa: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TransTrainReport {
    pub steps: Vec<TransLossReport>,
}

/// Trains the translator on registered pairs. The tokenizers are
/// frozen: their parameter hashes are asserted unchanged, and a drift
/// is a hard error.
pub fn train_translator<T: Scalar>(
    translator: &mut TranslatorNet<T>,
    pairs: &[(Image<T>, Image<T>)],
    vq_he: &VqVae<T>,
    vq_ihc: &VqVae<T>,
    cfg: &TransTrainConfig,
) -> Result<TransTrainReport, NnError> {
    assert!(!pairs.is_empty(), "dataset must be non-empty");
    let he_hash_before = param_hash(vq_he);
    let ihc_hash_before = param_hash(vq_ihc);

    // Frozen tokenizers: precompute the quantized H&E aggregates, the
    // IHC encoder targets, and the IHC pixel targets once.
    let mut fhat_he = Vec::with_capacity(pairs.len());
    let mut f_ihc_gt = Vec::with_capacity(pairs.len());
    let mut x_ihc = Vec::with_capacity(pairs.len());
    for (he, ihc) in pairs {
        let enc = vq_he.tokenize(he)?;
        fhat_he.push(enc.aggregate);
        f_ihc_gt.push(vq_ihc.encode_image(ihc)?.into_data());
        x_ihc.push(ihc.data().clone());
    }

    let mut report = TransTrainReport::default();
    if cfg.epochs > 0 {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x51));
        let mut opt = Adam::new(cfg.lr);
        let mut step = 0usize;

        for _epoch in 0..cfg.epochs {
            let order = crate::nn::util::shuffled_indices(pairs.len(), &mut shuffle_rng);
            for chunk in order.chunks(cfg.batch_size) {
                let stack3 = crate::nn::util::stack3::<T>;
                let in_batch: Vec<_> = chunk.iter().map(|&i| fhat_he[i].clone()).collect();
                let gt_batch: Vec<_> = chunk.iter().map(|&i| f_ihc_gt[i].clone()).collect();
                let px_batch: Vec<_> = chunk.iter().map(|&i| x_ihc[i].clone()).collect();

                let mut tape = Tape::<T>::new();
                let input = tape.constant(stack3(&in_batch));
                let gt = tape.constant(stack3(&gt_batch));
                let pixels = tape.constant(stack3(&px_batch));

                let pred = translator.forward(&mut tape, input, true);
                let lsa = tape.l1(pred, gt);
                // Through the frozen decoder: gradients flow into the
                // translator but no decoder parameter is bound.
                let decoded =
                    vq_ihc.decode_tape(&mut tape, pred, false, false, &mut dropout_rng);
                let isa = tape.l1(pixels, decoded);
                let mut terms: Vec<(crate::nn::Var, f64)> = Vec::new();
                if !cfg.disable_lsa {
                    terms.push((lsa, 1.0));
                }
                if !cfg.disable_isa {
                    terms.push((isa, cfg.lambda_trans));
                }
                assert!(!terms.is_empty(), "at least one alignment term");
                let total = tape.weighted_sum(&terms);

                let step_report = TransLossReport {
                    lsa: tape.scalar(lsa).as_f64(),
                    isa: tape.scalar(isa).as_f64(),
                    total: tape.scalar(total).as_f64(),
                };
                if !step_report.total.is_finite() {
                    return Err(NnError::Diverged {
                        step,
                        loss: step_report.total,
                    });
                }
                let grads = tape.backward(total);
                let by_name = tape.param_grads(&grads);
                opt.step(translator, &by_name);
                report.steps.push(step_report);
                step += 1;
            }
        }
    }

    if param_hash(vq_he) != he_hash_before || param_hash(vq_ihc) != ihc_hash_before {
        return Err(NnError::ShapeMismatch {
            context: "train_translator",
            details: "frozen tokenizer parameters drifted".into(),
        });
    }
    Ok(report)
}
