//! Reusable layers: each owns its tensors, binds them onto the tape by
//! name at forward time, and exposes them to visitors.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamVisit;
use super::tape::{Tape, Var};
use crate::scalar::Scalar;

/// Seeded normal sample via Box-Muller; identical stream for f32/f64.
pub fn normal_init<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> ArrayD<T> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        T::of(z * std)
    })
}

#[derive(Debug, Clone)]
pub struct LinearLayer<T: Scalar> {
    pub name: String,
    pub w: ArrayD<T>,
    pub b: ArrayD<T>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(name: &str, dim_in: usize, dim_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (1.0 / dim_in as f64).sqrt();
        Self {
            name: name.to_string(),
            w: normal_init(rng, &[dim_in, dim_out], std),
            b: ArrayD::zeros(IxDyn(&[dim_out])),
        }
    }

    pub fn zeros(name: &str, dim_in: usize, dim_out: usize) -> Self {
        Self {
            name: name.to_string(),
            w: ArrayD::zeros(IxDyn(&[dim_in, dim_out])),
            b: ArrayD::zeros(IxDyn(&[dim_out])),
        }
    }

    /// Applies to the last axis of `x` by flattening to `(P, dim_in)`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        let shape: Vec<usize> = tape.value(x).shape().to_vec();
        let dim_in = *shape.last().expect("non-scalar input");
        let p: usize = shape[..shape.len() - 1].iter().product();
        let dim_out = self.b.len();
        let w = tape.bind(&format!("{}.w", self.name), &self.w, trainable);
        let b = tape.bind(&format!("{}.b", self.name), &self.b, trainable);
        let flat = tape.reshape(x, &[p, dim_in]);
        let y = tape.matmul(flat, w);
        let y = tape.bias_last(y, b);
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = dim_out;
        tape.reshape(y, &out_shape)
    }
}

impl<T: Scalar> ParamVisit<T> for LinearLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        f(&format!("{}.w", self.name), &self.w);
        f(&format!("{}.b", self.name), &self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        f(&format!("{}.w", self.name), &mut self.w);
        f(&format!("{}.b", self.name), &mut self.b);
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer<T: Scalar> {
    pub name: String,
    pub w: ArrayD<T>,
    pub b: ArrayD<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn new(
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let std = (2.0 / (ci * k * k) as f64).sqrt();
        Self {
            name: name.to_string(),
            w: normal_init(rng, &[co, ci, k, k], std),
            b: ArrayD::zeros(IxDyn(&[co])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        let w = tape.bind(&format!("{}.w", self.name), &self.w, trainable);
        let b = tape.bind(&format!("{}.b", self.name), &self.b, trainable);
        tape.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

impl<T: Scalar> ParamVisit<T> for Conv2dLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        f(&format!("{}.w", self.name), &self.w);
        f(&format!("{}.b", self.name), &self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        f(&format!("{}.w", self.name), &mut self.w);
        f(&format!("{}.b", self.name), &mut self.b);
    }
}

#[derive(Debug, Clone)]
pub struct GroupNormLayer<T: Scalar> {
    pub name: String,
    pub gamma: ArrayD<T>,
    pub beta: ArrayD<T>,
    pub groups: usize,
}

impl<T: Scalar> GroupNormLayer<T> {
    pub fn new(name: &str, channels: usize, groups: usize) -> Self {
        assert_eq!(channels % groups, 0);
        Self {
            name: name.to_string(),
            gamma: ArrayD::from_elem(IxDyn(&[channels]), T::one()),
            beta: ArrayD::zeros(IxDyn(&[channels])),
            groups,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        let g = tape.bind(&format!("{}.gamma", self.name), &self.gamma, trainable);
        let b = tape.bind(&format!("{}.beta", self.name), &self.beta, trainable);
        tape.group_norm(x, g, b, self.groups, 1e-5)
    }
}

impl<T: Scalar> ParamVisit<T> for GroupNormLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        f(&format!("{}.gamma", self.name), &self.gamma);
        f(&format!("{}.beta", self.name), &self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        f(&format!("{}.gamma", self.name), &mut self.gamma);
        f(&format!("{}.beta", self.name), &mut self.beta);
    }
}
