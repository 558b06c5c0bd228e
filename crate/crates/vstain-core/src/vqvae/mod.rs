//! Modality-specific tokenizer: encoder, decoder, discriminator, the
//! multi-scale residual quantizer glue, and the stage-(a) training
//! loop with straight-through gradients and EMA codebook updates.

mod ema;
mod loss;
mod nets;
mod rvq_op;
mod train;

pub use loss::{adversarial_losses, vq_loss_op, VqLossReport};
pub use nets::{DecoderNet, Discriminator, EncoderNet};
pub use rvq_op::{rvq_encode_op, RvqTapeResult};
pub use train::{train_vqvae, VqTrainConfig, VqTrainReport};

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_schedule, Codebook, FeatureMap, Image, ScaleProjection, ScaleSchedule,
};
use crate::nn::{LinearLayer, NnError, ParamVisit, Tape, Var};
use crate::scalar::Scalar;

/// Architecture and quantizer settings for one modality's tokenizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VqVaeConfig {
    pub image_size: usize,
    /// Width of the first block; deeper blocks double up to 4x.
    pub base_channels: usize,
    /// Latent channel width C.
    pub latent_channels: usize,
    /// Stride-2 stages; the latent grid is `image_size >> num_down`.
    pub num_down: usize,
    pub groups: usize,
    pub vocab: usize,
    pub schedule: ScaleSchedule,
    pub dropout: f64,
    pub ema_decay: f64,
    pub disc_base: usize,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            base_channels: 64,
            latent_channels: 32,
            num_down: 4,
            groups: 8,
            vocab: 4096,
            schedule: ScaleSchedule::default(),
            dropout: 0.5,
            ema_decay: 0.99,
            disc_base: 32,
        }
    }
}

impl VqVaeConfig {
    pub fn grid(&self) -> (usize, usize) {
        let g = self.image_size >> self.num_down;
        (g, g)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.image_size % (1 << self.num_down) != 0 {
            return Err(format!(
                "image_size {} not divisible by 2^{}",
                self.image_size, self.num_down
            ));
        }
        let violations = validate_schedule(&self.schedule, self.grid());
        if !violations.is_empty() {
            return Err(format!(
                "schedule invalid for grid {:?}: {violations:?}",
                self.grid()
            ));
        }
        if self.vocab < 2 || self.vocab > u16::MAX as usize + 1 {
            return Err(format!("vocab {} outside [2, 65536]", self.vocab));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// One modality's full tokenizer stack.
pub struct VqVae<T: Scalar> {
    pub cfg: VqVaeConfig,
    pub encoder: EncoderNet<T>,
    pub decoder: DecoderNet<T>,
    pub discriminator: Discriminator<T>,
    /// Per-scale projections applied to looked-up codewords.
    pub projections: Vec<LinearLayer<T>>,
    /// Raw codeword table, mutated by EMA during training.
    pub codebook: Array2<T>,
    pub ema_counts: Array1<T>,
    pub ema_sums: Array2<T>,
}

impl<T: Scalar> VqVae<T> {
    pub fn new(cfg: VqVaeConfig, seed: u64) -> Self {
        cfg.validate().expect("valid tokenizer config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderNet::new(&cfg, &mut rng);
        let decoder = DecoderNet::new(&cfg, &mut rng);
        let discriminator = Discriminator::new("disc", cfg.disc_base, &mut rng);
        let c = cfg.latent_channels;
        let projections = (0..cfg.schedule.num_scales())
            .map(|k| {
                // Identity weight, zero bias.
                let mut l = LinearLayer::zeros(&format!("proj.{k}"), c, c);
                for i in 0..c {
                    l.w[[i, i]] = T::one();
                }
                l
            })
            .collect();
        // Small seeded normal init; training replaces it with a
        // data-dependent draw on the first batch.
        let codebook = Array2::from_shape_fn((cfg.vocab, c), |_| {
            T::of(ema::normal_sample(&mut rng) * 0.05)
        });
        let ema_counts = Array1::from_elem(cfg.vocab, T::one());
        let ema_sums = codebook.clone();
        Self {
            cfg,
            encoder,
            decoder,
            discriminator,
            projections,
            codebook,
            ema_counts,
            ema_sums,
        }
    }

    /// Immutable codebook value with its content hash.
    pub fn codebook_domain(&self) -> Codebook<T> {
        Codebook::new(self.codebook.clone()).expect("codebook stays valid")
    }

    /// Projections as the immutable domain value (transposed into the
    /// `out = W f + b` convention).
    pub fn scale_projection(&self) -> ScaleProjection<T> {
        let weights = self
            .projections
            .iter()
            .map(|l| {
                l.w.view()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap()
                    .t()
                    .to_owned()
            })
            .collect();
        let biases = self
            .projections
            .iter()
            .map(|l| {
                l.b.view()
                    .into_dimensionality::<ndarray::Ix1>()
                    .unwrap()
                    .to_owned()
            })
            .collect();
        ScaleProjection::new(weights, biases)
    }

    /// Encoder forward on the tape over a `(N, 3, H, W)` batch.
    pub fn encode_tape(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        self.encoder.forward(tape, x, trainable)
    }

    /// Decoder forward on the tape. `train` enables dropout.
    pub fn decode_tape(
        &self,
        tape: &mut Tape<T>,
        f: Var,
        trainable: bool,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Var {
        let dropout = if train { self.cfg.dropout } else { 0.0 };
        self.decoder.forward(tape, f, trainable, dropout, rng)
    }

    /// Deterministic eval-mode encoding of one image.
    pub fn encode_image(&self, image: &Image<T>) -> Result<FeatureMap<T>, NnError> {
        let (c, h, w) = image.data().dim();
        let mut tape = Tape::no_grad();
        let x = tape.constant(
            image
                .data()
                .to_owned()
                .into_shape_with_order(IxDyn(&[1, c, h, w]))
                .unwrap(),
        );
        let f = self.encode_tape(&mut tape, x, false);
        let v = tape.value(f);
        let dims = v.shape().to_vec();
        let arr = v
            .to_owned()
            .into_shape_with_order(IxDyn(&dims[1..]))
            .unwrap()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        FeatureMap::new(arr).map_err(|_| NnError::NonFinite {
            context: "encoder output",
        })
    }

    /// Deterministic eval-mode decoding of one feature map.
    pub fn decode_features(&self, f: &FeatureMap<T>) -> Result<Image<T>, NnError> {
        if f.channels() != self.cfg.latent_channels {
            return Err(NnError::ShapeMismatch {
                context: "decode_features",
                details: format!(
                    "expected {} channels, got {}",
                    self.cfg.latent_channels,
                    f.channels()
                ),
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
        let y = self.decode_tape(&mut tape, x, false, false, &mut rng);
        let v = tape.value(y);
        let dims = v.shape().to_vec();
        let arr = v
            .to_owned()
            .into_shape_with_order(IxDyn(&dims[1..]))
            .unwrap()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        Image::new(arr).map_err(|_| NnError::NonFinite {
            context: "decoder output",
        })
    }

    /// Pure tokenize path: encode, then multi-scale residual quantize.
    pub fn tokenize(&self, image: &Image<T>) -> Result<crate::rvq::EncodeResult<T>, NnError> {
        let f = self.encode_image(image)?;
        crate::rvq::encode_multiscale(
            f.data(),
            &self.codebook_domain(),
            &self.cfg.schedule,
            &self.scale_projection(),
        )
        .map_err(|e| NnError::ShapeMismatch {
            context: "tokenize",
            details: e.to_string(),
        })
    }

    /// Restores one named tensor (gradient params or quantizer state).
    pub fn set_tensor(&mut self, name: &str, value: ArrayD<T>) -> bool {
        match name {
            "codebook" => {
                self.codebook = value.into_dimensionality().unwrap();
                true
            }
            "ema.counts" => {
                self.ema_counts = value.into_dimensionality().unwrap();
                true
            }
            "ema.sums" => {
                self.ema_sums = value.into_dimensionality().unwrap();
                true
            }
            _ => {
                let mut found = false;
                self.visit_mut(&mut |n, t| {
                    if n == name {
                        *t = value.clone();
                        found = true;
                    }
                });
                found
            }
        }
    }
}

impl<T: Scalar> ParamVisit<T> for VqVae<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.encoder.visit(f);
        self.decoder.visit(f);
        for p in &self.projections {
            p.visit(f);
        }
        self.discriminator.visit(f);
        f("codebook", &self.codebook.clone().into_dyn());
        f("ema.counts", &self.ema_counts.clone().into_dyn());
        f("ema.sums", &self.ema_sums.clone().into_dyn());
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        // Gradient parameters only; quantizer state is restored through
        // `set_tensor`.
        self.encoder.visit_mut(f);
        self.decoder.visit_mut(f);
        for p in &mut self.projections {
            p.visit_mut(f);
        }
        self.discriminator.visit_mut(f);
    }
}
