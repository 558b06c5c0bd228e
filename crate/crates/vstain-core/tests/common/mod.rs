//! Shared helpers for the integration tests: miniature `f64` networks
//! (each under 500 parameters) and the per-loss-term gradient checks
//! used both by the dedicated gradient tests and the acceptance suite.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vstain_core::domain::{Codebook, ScaleSchedule};
use vstain_core::metrics::perceptual_proxy_op;
use vstain_core::nn::gradcheck::{check_model_gradients_multi, GradCheckReport};
use vstain_core::nn::{param_count, LinearLayer, ParamVisit, Tape, Var};
use vstain_core::translator::{TranslatorConfig, TranslatorNet};
use vstain_core::var::{VarConfig, VarTransformer};
use vstain_core::vqvae::{DecoderNet, Discriminator, EncoderNet, VqVaeConfig};

pub const GRAD_STEPS: [f64; 3] = [1e-6, 1e-5, 1e-4];
pub const GRAD_RTOL: f64 = 1e-3;
pub const GRAD_ATOL: f64 = 1e-8;

pub fn mini_vq_config() -> VqVaeConfig {
    VqVaeConfig {
        image_size: 16,
        base_channels: 2,
        latent_channels: 2,
        num_down: 1,
        groups: 2,
        vocab: 4,
        schedule: ScaleSchedule::new(vec![(4, 4), (8, 8)]),
        dropout: 0.0,
        ema_decay: 0.99,
        disc_base: 1,
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(lo..hi))
}

/// Encoder + projections + decoder as one checkable unit.
pub struct MiniGenerator {
    pub encoder: EncoderNet<f64>,
    pub decoder: DecoderNet<f64>,
    pub projections: Vec<LinearLayer<f64>>,
    pub cfg: VqVaeConfig,
}

impl MiniGenerator {
    pub fn new(seed: u64) -> Self {
        let cfg = mini_vq_config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderNet::new(&cfg, &mut rng);
        let decoder = DecoderNet::new(&cfg, &mut rng);
        let projections = (0..cfg.schedule.num_scales())
            .map(|k| {
                let mut l = LinearLayer::zeros(&format!("proj.{k}"), 2, 2);
                // Near-identity with a seeded perturbation so the
                // projection gradient is generic.
                for i in 0..2 {
                    for j in 0..2 {
                        l.w[[i, j]] = if i == j { 1.0 } else { 0.0 };
                        l.w[[i, j]] += rng.random_range(-0.1..0.1);
                    }
                    l.b[[i]] = rng.random_range(-0.05..0.05);
                }
                l
            })
            .collect();
        Self {
            encoder,
            decoder,
            projections,
            cfg,
        }
    }

    /// Smooth quantizer bypass: the residual walk with the identity in
    /// place of the lookup. The straight-through property test pins the
    /// quantized path to this one.
    pub fn forward_bypass(
        &self,
        tape: &mut Tape<f64>,
        x: Var,
        trainable: bool,
    ) -> (Var, Var, Var) {
        let f = self.encoder.forward(tape, x, trainable);
        let shape = tape.value(f).shape().to_vec();
        let (gh, gw) = (shape[2], shape[3]);
        let mut residual = f;
        let mut aggregate: Option<Var> = None;
        for (k, &(h, w)) in self.cfg.schedule.scales().iter().enumerate() {
            let down = tape.resize_bilinear(residual, h, w);
            let up = tape.resize_bilinear(down, gh, gw);
            let perm = tape.permute(up, &[0, 2, 3, 1]);
            let proj = self.projections[k].forward(tape, perm, trainable);
            let contribution = tape.permute(proj, &[0, 3, 1, 2]);
            residual = tape.sub(residual, contribution);
            aggregate = Some(match aggregate {
                None => contribution,
                Some(acc) => tape.add(acc, contribution),
            });
        }
        let agg = aggregate.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x_hat = self.decoder.forward(tape, agg, trainable, 0.0, &mut rng);
        (f, agg, x_hat)
    }
}

impl ParamVisit<f64> for MiniGenerator {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<f64>)) {
        self.encoder.visit(f);
        self.decoder.visit(f);
        for p in &self.projections {
            p.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.encoder.visit_mut(f);
        self.decoder.visit_mut(f);
        for p in &mut self.projections {
            p.visit_mut(f);
        }
    }
}

pub fn mini_translator(seed: u64) -> TranslatorNet<f64> {
    let mut t = TranslatorNet::new(
        TranslatorConfig {
            channels: 2,
            base: 1,
            groups: 1,
        },
        seed,
    );
    // The production head is zero-initialized (identity start); for a
    // generic gradient check give it a small seeded value.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    t.visit_mut(&mut |name, tensor| {
        if name.starts_with("trans.head") {
            for v in tensor.iter_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    });
    t
}

pub fn mini_var_config() -> VarConfig {
    VarConfig {
        dim: 6,
        layers: 1,
        heads: 2,
        mlp_ratio: 1,
        vocab: 4,
        latent_channels: 3,
        schedule: ScaleSchedule::new(vec![(1, 1), (2, 2)]),
        grid: (2, 2),
    }
}

pub fn mini_transformer(seed: u64) -> VarTransformer<f64> {
    VarTransformer::new(mini_var_config(), seed)
}

pub struct TermCheck {
    pub name: &'static str,
    pub params: usize,
    pub report: GradCheckReport,
}

/// Gradient checks for every loss term of the composite tokenizer
/// objective, the two alignment losses, and the autoregressive
/// objective, all on miniature networks against central finite
/// differences.
pub fn run_all_gradient_checks() -> Result<Vec<TermCheck>, String> {
    let mut results = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(424);
    let x_real = random_batch(&mut rng, &[1, 3, 16, 16], 0.05, 0.95);
    let x_other = random_batch(&mut rng, &[1, 3, 16, 16], 0.05, 0.95);

    // Composite objective, term 1: pixel reconstruction L1.
    {
        let mut model = MiniGenerator::new(1);
        let n = param_count(&model);
        assert!(n <= 500, "miniature generator has {n} params");
        let x = x_real.clone();
        let report = check_model_gradients_multi(
            &mut model,
            |m| {
                let mut tape = Tape::<f64>::new();
                let xv = tape.constant(x.clone());
                let (_, _, x_hat) = m.forward_bypass(&mut tape, xv, true);
                let loss = tape.l1(xv, x_hat);
                let grads = tape.backward(loss);
                (tape.scalar(loss), tape.param_grads(&grads))
            },
            &GRAD_STEPS,
            GRAD_RTOL,
            GRAD_ATOL,
        )?;
        results.push(TermCheck {
            name: "tokenizer pixel L1",
            params: n,
            report,
        });
    }

    // Term 2: latent feature L1 between f and the aggregate.
    {
        let mut model = MiniGenerator::new(2);
        let n = param_count(&model);
        let x = x_real.clone();
        let report = check_model_gradients_multi(
            &mut model,
            |m| {
                let mut tape = Tape::<f64>::new();
                let xv = tape.constant(x.clone());
                let (f, agg, _) = m.forward_bypass(&mut tape, xv, true);
                let loss = tape.l1(f, agg);
                let grads = tape.backward(loss);
                (tape.scalar(loss), tape.param_grads(&grads))
            },
            &GRAD_STEPS,
            GRAD_RTOL,
            GRAD_ATOL,
        )?;
        results.push(TermCheck {
            name: "tokenizer latent L1",
            params: n,
            report,
        });
    }

    // Term 3: perceptual proxy distance.
    {
        let mut model = MiniGenerator::new(3);
        let n = param_count(&model);
        let x = x_real.clone();
        let report = check_model_gradients_multi(
            &mut model,
            |m| {
                let mut tape = Tape::<f64>::new();
                let xv = tape.constant(x.clone());
                let (_, _, x_hat) = m.forward_bypass(&mut tape, xv, true);
                let loss = perceptual_proxy_op(&mut tape, xv, x_hat);
                let grads = tape.backward(loss);
                (tape.scalar(loss), tape.param_grads(&grads))
            },
            &GRAD_STEPS,
            GRAD_RTOL,
            GRAD_ATOL,
        )?;
        results.push(TermCheck {
            name: "tokenizer perceptual proxy",
            params: n,
            report,
        });
    }

    // Term 4a: adversarial generator term through a frozen critic.
    {
        let mut model = MiniGenerator::new(4);
        let n = param_count(&model);
        let mut drng = ChaCha8Rng::seed_from_u64(40);
        let disc = Discriminator::<f64>::new("d", 1, &mut drng);
        let x = x_real.clone();
        let report = check_model_gradients_multi(
            &mut model,
            |m| {
                let mut tape = Tape::<f64>::new();
                let xv = tape.constant(x.clone());
                let (_, _, x_hat) = m.forward_bypass(&mut tape, xv, true);
                let logits = disc.forward(&mut tape, x_hat, false).logits;
                let neg = tape.scale(logits, -1.0);
                let sp = tape.softplus(neg);
                let loss = tape.mean_all(sp);
                let grads = tape.backward(loss);
                (tape.scalar(loss), tape.param_grads(&grads))
            },
            &GRAD_STEPS,
            GRAD_RTOL,
            GRAD_ATOL,
        )?;
        results.push(TermCheck {
            name: "tokenizer adversarial (generator side)",
            params: n,
            report,
        });
    }

    // Term 4b: adversarial discriminator term.
    {
        let mut drng = ChaCha8Rng::seed_from_u64(41);
        let mut disc = Discriminator::<f64>::new("d", 1, &mut drng);
        let n = param_count(&disc);
        assert!(n <= 500, "miniature critic has {n} params");
        let real = x_real.clone();
        let fake = x_other.clone();
        let report = check_model_gradients_multi(
            &mut disc,
            |d| {
                let mut tape = Tape::<f64>::new();
                let rv = tape.constant(real.clone());
                let fv = tape.constant(fake.clone());
                let rl = d.forward(&mut tape, rv, true).logits;
                let fl = d.forward(&mut tape, fv, true).logits;
                let neg = tape.scale(rl, -1.0);
                let sp_r = tape.softplus(neg);
                let tr = tape.mean_all(sp_r);
                let sp_f = tape.softplus(fl);
                let tf = tape.mean_all(sp_f);
                let loss = tape.add(tr, tf);
                let grads = tape.backward(loss);
                (tape.scalar(loss), tape.param_grads(&grads))
            },
            &GRAD_STEPS,
            GRAD_RTOL,
            GRAD_ATOL,
        )?;
        results.push(TermCheck {
            name: "tokenizer adversarial (critic side)",
            params: n,
            report,
        });
    }

    // Latent-space alignment through the translator.
    {
        let mut t = mini_translator(5);
        let n = param_count(&t);
        assert!(n <= 500, "miniature translator has {n} params");
        let input = random_batch(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
        let gt = random_batch(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
        let report = check_model_gradients_multi(
            &mut t,
            |t| {
                let mut tape = Tape::<f64>::new();
                let iv = tape.constant(input.clone());
                let gv = tape.constant(gt.clone());
                let pred = t.forward(&mut tape, iv, true);
                let loss = tape.l1(pred, gv);
                let grads = tape.backward(loss);
                (tape.scalar(loss), tape.param_grads(&grads))
            },
            &GRAD_STEPS,
            GRAD_RTOL,
            GRAD_ATOL,
        )?;
        results.push(TermCheck {
            name: "latent alignment L1",
            params: n,
            report,
        });
    }

    // Image-space alignment: through the frozen decoder into the
    // translator.
    {
        let mut t = mini_translator(6);
        let n = param_count(&t);
        let frozen = MiniGenerator::new(7);
        let input = random_batch(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
        let x_ihc = x_real.clone();
        let report = check_model_gradients_multi(
            &mut t,
            |t| {
                let mut tape = Tape::<f64>::new();
                let iv = tape.constant(input.clone());
                let xv = tape.constant(x_ihc.clone());
                let pred = t.forward(&mut tape, iv, true);
                let mut drng = ChaCha8Rng::seed_from_u64(0);
                let decoded = frozen.decoder.forward(&mut tape, pred, false, 0.0, &mut drng);
                let loss = tape.l1(xv, decoded);
                let grads = tape.backward(loss);
                (tape.scalar(loss), tape.param_grads(&grads))
            },
            &GRAD_STEPS,
            GRAD_RTOL,
            GRAD_ATOL,
        )?;
        results.push(TermCheck {
            name: "image alignment L1 (through frozen decoder)",
            params: n,
            report,
        });
    }

    // Autoregressive objective: token cross-entropy wrt transformer.
    {
        let mut model = mini_transformer(8);
        let n = param_count(&model);
        assert!(n <= 500, "miniature transformer has {n} params");
        let inputs = random_batch(&mut rng, &[1, 5, 3], -1.0, 1.0);
        let ctx = random_batch(&mut rng, &[1, 3], -1.0, 1.0);
        let targets = vec![1usize, 0, 3, 2, 1];
        let report = check_model_gradients_multi(
            &mut model,
            |m| {
                let mut tape = Tape::<f64>::new();
                let iv = tape.constant(inputs.clone());
                let cv = tape.constant(ctx.clone());
                let logits = m.forward_seq(&mut tape, iv, cv, 2, true);
                let flat = tape.reshape(logits, &[5, 4]);
                let loss = tape.cross_entropy(flat, &targets);
                let grads = tape.backward(loss);
                (tape.scalar(loss), tape.param_grads(&grads))
            },
            &GRAD_STEPS,
            GRAD_RTOL,
            GRAD_ATOL,
        )?;
        results.push(TermCheck {
            name: "autoregressive cross-entropy",
            params: n,
            report,
        });
    }

    // Autoregressive pixel term wrt the fine-tuned decoder.
    {
        let gen = MiniGenerator::new(9);
        let mut dec = gen.decoder;
        let n = param_count(&dec);
        assert!(n <= 500, "miniature decoder has {n} params");
        let fhat = random_batch(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
        let x_ihc = x_real.clone();
        let report = check_model_gradients_multi(
            &mut dec,
            |d| {
                let mut tape = Tape::<f64>::new();
                let fv = tape.constant(fhat.clone());
                let xv = tape.constant(x_ihc.clone());
                let mut drng = ChaCha8Rng::seed_from_u64(0);
                let x_hat = d.forward(&mut tape, fv, true, 0.0, &mut drng);
                let loss = tape.l1(xv, x_hat);
                let grads = tape.backward(loss);
                (tape.scalar(loss), tape.param_grads(&grads))
            },
            &GRAD_STEPS,
            GRAD_RTOL,
            GRAD_ATOL,
        )?;
        results.push(TermCheck {
            name: "autoregressive pixel L1 (fine-tuned decoder)",
            params: n,
            report,
        });
    }

    // Autoregressive adversarial term wrt the fine-tuned decoder.
    {
        let gen = MiniGenerator::new(10);
        let mut dec = gen.decoder;
        let n = param_count(&dec);
        let mut drng = ChaCha8Rng::seed_from_u64(50);
        let disc = Discriminator::<f64>::new("d", 1, &mut drng);
        let fhat = random_batch(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
        let report = check_model_gradients_multi(
            &mut dec,
            |d| {
                let mut tape = Tape::<f64>::new();
                let fv = tape.constant(fhat.clone());
                let mut rng2 = ChaCha8Rng::seed_from_u64(0);
                let x_hat = d.forward(&mut tape, fv, true, 0.0, &mut rng2);
                let logits = disc.forward(&mut tape, x_hat, false).logits;
                let neg = tape.scale(logits, -1.0);
                let sp = tape.softplus(neg);
                let loss = tape.mean_all(sp);
                let grads = tape.backward(loss);
                (tape.scalar(loss), tape.param_grads(&grads))
            },
            &GRAD_STEPS,
            GRAD_RTOL,
            GRAD_ATOL,
        )?;
        results.push(TermCheck {
            name: "autoregressive adversarial (decoder side)",
            params: n,
            report,
        });
    }

    Ok(results)
}
