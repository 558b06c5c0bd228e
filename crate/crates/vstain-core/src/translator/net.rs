//! Encoder-decoder translator with skip connections on latent grids.
//!
//! The output head sits on a residual branch and is zero-initialized,
//! so a fresh translator is exactly the identity map.

use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Conv2dLayer, GroupNormLayer, ParamVisit, Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslatorConfig {
    /// Latent channel width C (input and output).
    pub channels: usize,
    /// Hidden width of the first level.
    pub base: usize,
    pub groups: usize,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            base: 64,
            groups: 8,
        }
    }
}

struct Block<T: Scalar> {
    conv: Conv2dLayer<T>,
    norm: GroupNormLayer<T>,
}

impl<T: Scalar> Block<T> {
    fn new(name: &str, ci: usize, co: usize, stride: usize, groups: usize, rng: &mut ChaCha8Rng) -> Self {
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

impl<T: Scalar> ParamVisit<T> for Block<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.conv.visit(f);
        self.norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.conv.visit_mut(f);
        self.norm.visit_mut(f);
    }
}

/// Two-level encoder-decoder over `(N, C, H, W)` latent grids with
/// skip connections at each level and a zero-initialized residual
/// output head.
pub struct TranslatorNet<T: Scalar> {
    pub cfg: TranslatorConfig,
    stem: Block<T>,
    down1: Block<T>,
    down2: Block<T>,
    mid: Block<T>,
    up1: Block<T>,
    up2: Block<T>,
    head: Conv2dLayer<T>,
}

impl<T: Scalar> TranslatorNet<T> {
    pub fn new(cfg: TranslatorConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = cfg.base;
        let g = cfg.groups;
        let stem = Block::new("trans.stem", cfg.channels, b, 1, g, &mut rng);
        let down1 = Block::new("trans.down1", b, 2 * b, 2, g, &mut rng);
        let down2 = Block::new("trans.down2", 2 * b, 4 * b, 2, g, &mut rng);
        let mid = Block::new("trans.mid", 4 * b, 4 * b, 1, g, &mut rng);
        // After upsample, fuse with the skip of matching resolution.
        let up1 = Block::new("trans.up1", 4 * b + 2 * b, 2 * b, 1, g, &mut rng);
        let up2 = Block::new("trans.up2", 2 * b + b, b, 1, g, &mut rng);
        let mut head = Conv2dLayer::new("trans.head", b, cfg.channels, 3, 1, 1, &mut rng);
        head.w.fill(T::zero());
        head.b.fill(T::zero());
        Self {
            cfg,
            stem,
            down1,
            down2,
            mid,
            up1,
            up2,
            head,
        }
    }

    /// Same-shape latent map. Requires H and W divisible by 4.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        let shape = tape.value(x).shape().to_vec();
        assert_eq!(shape[1], self.cfg.channels, "translator channel mismatch");
        assert!(
            shape[2] % 4 == 0 && shape[3] % 4 == 0,
            "translator grid must be divisible by 4, got {}x{}",
            shape[2],
            shape[3]
        );
        let s0 = self.stem.forward(tape, x, trainable);
        let s1 = self.down1.forward(tape, s0, trainable);
        let s2 = self.down2.forward(tape, s1, trainable);
        let m = self.mid.forward(tape, s2, trainable);
        let u1 = tape.upsample_nearest2(m);
        let u1 = tape.concat(1, u1, s1);
        let u1 = self.up1.forward(tape, u1, trainable);
        let u2 = tape.upsample_nearest2(u1);
        let u2 = tape.concat(1, u2, s0);
        let u2 = self.up2.forward(tape, u2, trainable);
        let res = self.head.forward(tape, u2, trainable);
        tape.add(x, res)
    }
}

impl<T: Scalar> ParamVisit<T> for TranslatorNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.stem.visit(f);
        self.down1.visit(f);
        self.down2.visit(f);
        self.mid.visit(f);
        self.up1.visit(f);
        self.up2.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.stem.visit_mut(f);
        self.down1.visit_mut(f);
        self.down2.visit_mut(f);
        self.mid.visit_mut(f);
        self.up1.visit_mut(f);
        self.up2.visit_mut(f);
        self.head.visit_mut(f);
    }
}

impl<T: Scalar> TranslatorNet<T> {
    /// Eval translation of one feature map.
    pub fn translate(
        &self,
        f: &crate::domain::FeatureMap<T>,
    ) -> Result<crate::domain::FeatureMap<T>, crate::nn::NnError> {
        if f.channels() != self.cfg.channels {
            return Err(crate::nn::NnError::ShapeMismatch {
                context: "translate",
                details: format!(
                    "expected {} channels, got {}",
                    self.cfg.channels,
                    f.channels()
                ),
            });
        }
        let (c, h, w) = f.data().dim();
        let mut tape = Tape::no_grad();
        let x = tape.constant(
            f.data()
                .to_owned()
                .into_shape_with_order(ndarray::IxDyn(&[1, c, h, w]))
                .unwrap(),
        );
        let y = self.forward(&mut tape, x, false);
        let v = tape.value(y);
        let arr = v
            .to_owned()
            .into_shape_with_order(ndarray::IxDyn(&[c, h, w]))
            .unwrap()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        crate::domain::FeatureMap::new(arr).map_err(|_| crate::nn::NnError::NonFinite {
            context: "translator output",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::FeatureMap;
    use ndarray::Array3;

    fn tiny() -> TranslatorNet<f64> {
        TranslatorNet::new(
            TranslatorConfig {
                channels: 4,
                base: 8,
                groups: 4,
            },
            3,
        )
    }

    #[test]
    fn shape_is_preserved() {
        let t = tiny();
        let f = FeatureMap::new(Array3::from_shape_fn((4, 8, 8), |(c, y, x)| {
            ((c + y + x) as f64 * 0.3).sin()
        }))
        .unwrap();
        let out = t.translate(&f).unwrap();
        assert_eq!(out.data().dim(), (4, 8, 8));
    }

    #[test]
    fn fresh_translator_is_exactly_identity() {
        let t = tiny();
        let f = FeatureMap::new(Array3::from_shape_fn((4, 8, 8), |(c, y, x)| {
            ((c * 64 + y * 8 + x) as f64 * 0.01).cos()
        }))
        .unwrap();
        let out = t.translate(&f).unwrap();
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn eval_translation_is_deterministic() {
        let t = tiny();
        let f = FeatureMap::new(Array3::from_shape_fn((4, 8, 8), |_| 0.37f64)).unwrap();
        let a = t.translate(&f).unwrap();
        let b = t.translate(&f).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
