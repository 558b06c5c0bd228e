//! The convolutional stacks: strided encoder, upsampling decoder, and
//! a three-layer patch discriminator with multi-scale aggregation.

use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;

use super::VqVaeConfig;
use crate::nn::{Conv2dLayer, GroupNormLayer, ParamVisit, Tape, Var};
use crate::scalar::Scalar;

fn width_at(base: usize, depth: usize) -> usize {
    (base << depth).min(base * 4)
}

#[derive(Clone)]
struct ConvBlock<T: Scalar> {
    conv: Conv2dLayer<T>,
    norm: GroupNormLayer<T>,
}

impl<T: Scalar> ConvBlock<T> {
    fn new(
        name: &str,
        ci: usize,
        co: usize,
        stride: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            conv: Conv2dLayer::new(&format!("{name}.conv"), ci, co, 3, stride, 1, rng),
            norm: GroupNormLayer::new(&format!("{name}.norm"), co, groups.min(co)),
        }
    }

    fn forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        let y = self.conv.forward(tape, x, trainable);
        let y = self.norm.forward(tape, y, trainable);
        tape.silu(y)
    }
}

impl<T: Scalar> ParamVisit<T> for ConvBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.conv.visit(f);
        self.norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.conv.visit_mut(f);
        self.norm.visit_mut(f);
    }
}

/// Image to latent grid: a stem, `num_down` stride-2 blocks, and a
/// projection to the latent width.
#[derive(Clone)]
pub struct EncoderNet<T: Scalar> {
    stem: ConvBlock<T>,
    downs: Vec<ConvBlock<T>>,
    head: Conv2dLayer<T>,
}

impl<T: Scalar> EncoderNet<T> {
    pub fn new(cfg: &VqVaeConfig, rng: &mut ChaCha8Rng) -> Self {
        let base = cfg.base_channels;
        let stem = ConvBlock::new("enc.stem", 3, base, 1, cfg.groups, rng);
        let mut downs = Vec::new();
        for i in 0..cfg.num_down {
            let ci = width_at(base, i);
            let co = width_at(base, i + 1);
            downs.push(ConvBlock::new(
                &format!("enc.down{i}"),
                ci,
                co,
                2,
                cfg.groups,
                rng,
            ));
        }
        let top = width_at(base, cfg.num_down);
        let head = Conv2dLayer::new("enc.head", top, cfg.latent_channels, 3, 1, 1, rng);
        Self { stem, downs, head }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        let mut h = self.stem.forward(tape, x, trainable);
        for block in &self.downs {
            h = block.forward(tape, h, trainable);
        }
        self.head.forward(tape, h, trainable)
    }
}

impl<T: Scalar> ParamVisit<T> for EncoderNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.stem.visit(f);
        for d in &self.downs {
            d.visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.stem.visit_mut(f);
        for d in &mut self.downs {
            d.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

/// Latent grid to image: mirror of the encoder with nearest-neighbor
/// upsampling and a bounded (sigmoid) output.
#[derive(Clone)]
pub struct DecoderNet<T: Scalar> {
    stem: ConvBlock<T>,
    ups: Vec<ConvBlock<T>>,
    head: Conv2dLayer<T>,
}

impl<T: Scalar> DecoderNet<T> {
    pub fn new(cfg: &VqVaeConfig, rng: &mut ChaCha8Rng) -> Self {
        let base = cfg.base_channels;
        let top = width_at(base, cfg.num_down);
        let stem = ConvBlock::new("dec.stem", cfg.latent_channels, top, 1, cfg.groups, rng);
        let mut ups = Vec::new();
        for i in 0..cfg.num_down {
            let ci = width_at(base, cfg.num_down - i);
            let co = width_at(base, cfg.num_down - i - 1);
            ups.push(ConvBlock::new(
                &format!("dec.up{i}"),
                ci,
                co,
                1,
                cfg.groups,
                rng,
            ));
        }
        let head = Conv2dLayer::new("dec.head", base, 3, 3, 1, 1, rng);
        Self { stem, ups, head }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        f: Var,
        trainable: bool,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Var {
        let mut h = self.stem.forward(tape, f, trainable);
        for (i, block) in self.ups.iter().enumerate() {
            h = tape.upsample_nearest2(h);
            h = block.forward(tape, h, trainable);
            if i == 0 && dropout > 0.0 {
                h = tape.dropout(h, dropout, rng);
            }
        }
        let y = self.head.forward(tape, h, trainable);
        tape.sigmoid(y)
    }
}

impl<T: Scalar> ParamVisit<T> for DecoderNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.stem.visit(f);
        for u in &self.ups {
            u.visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.stem.visit_mut(f);
        for u in &mut self.ups {
            u.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

/// Three-layer patch discriminator. Each layer exposes its feature map
/// and a 1x1 logit head; the final logits aggregate all three heads on
/// the coarsest grid.
#[derive(Clone)]
pub struct Discriminator<T: Scalar> {
    convs: Vec<Conv2dLayer<T>>,
    norms: Vec<Option<GroupNormLayer<T>>>,
    heads: Vec<Conv2dLayer<T>>,
    name: String,
}

pub struct DiscOutput {
    pub logits: Var,
    pub features: Vec<Var>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(name: &str, base: usize, rng: &mut ChaCha8Rng) -> Self {
        let widths = [3, base, base * 2, base * 4];
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut heads = Vec::new();
        for i in 0..3 {
            convs.push(Conv2dLayer::new(
                &format!("{name}.l{i}.conv"),
                widths[i],
                widths[i + 1],
                4,
                2,
                1,
                rng,
            ));
            norms.push(if i == 0 {
                None
            } else {
                Some(GroupNormLayer::new(
                    &format!("{name}.l{i}.norm"),
                    widths[i + 1],
                    4.min(widths[i + 1]),
                ))
            });
            heads.push(Conv2dLayer::new(
                &format!("{name}.l{i}.head"),
                widths[i + 1],
                1,
                1,
                1,
                0,
                rng,
            ));
        }
        Self {
            convs,
            norms,
            heads,
            name: name.to_string(),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> DiscOutput {
        let mut h = x;
        let mut features = Vec::new();
        let mut head_logits = Vec::new();
        for i in 0..3 {
            h = self.convs[i].forward(tape, h, trainable);
            if let Some(norm) = &self.norms[i] {
                h = norm.forward(tape, h, trainable);
            }
            h = tape.leaky_relu(h, 0.2);
            features.push(h);
            head_logits.push(self.heads[i].forward(tape, h, trainable));
        }
        // Aggregate multi-scale heads on the coarsest grid.
        let coarse = tape.value(head_logits[2]).shape().to_vec();
        let (gh, gw) = (coarse[2], coarse[3]);
        let l0 = tape.resize_bilinear(head_logits[0], gh, gw);
        let l1 = tape.resize_bilinear(head_logits[1], gh, gw);
        let sum = tape.add(l0, l1);
        let sum = tape.add(sum, head_logits[2]);
        let logits = tape.scale(sum, 1.0 / 3.0);
        DiscOutput { logits, features }
    }

    pub fn prefix(&self) -> &str {
        &self.name
    }
}

impl<T: Scalar> ParamVisit<T> for Discriminator<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        for i in 0..3 {
            self.convs[i].visit(f);
            if let Some(n) = &self.norms[i] {
                n.visit(f);
            }
            self.heads[i].visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        for i in 0..3 {
            self.convs[i].visit_mut(f);
            if let Some(n) = &mut self.norms[i] {
                n.visit_mut(f);
            }
            self.heads[i].visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn discriminator_emits_logit_grid_and_features() {
        let mut rng = rand::SeedableRng::seed_from_u64(5);
        let d = Discriminator::<f32>::new("d", 4, &mut rng);
        let mut tape = Tape::no_grad();
        let x = tape.constant(ArrayD::from_elem(IxDyn(&[2, 3, 32, 32]), 0.5f32));
        let out = d.forward(&mut tape, x, false);
        assert_eq!(tape.value(out.logits).shape(), &[2, 1, 4, 4]);
        assert_eq!(out.features.len(), 3);
        assert_eq!(tape.value(out.features[0]).shape(), &[2, 4, 16, 16]);
        assert!(tape.value(out.logits).iter().all(|v| v.is_finite()));
    }
}
