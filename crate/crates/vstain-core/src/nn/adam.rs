//! Adam optimizer keyed by parameter name.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::params::ParamVisit;
use crate::scalar::Scalar;

pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: BTreeMap<String, (ArrayD<T>, ArrayD<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// One update over every parameter that has a gradient entry.
    pub fn step(
        &mut self,
        model: &mut dyn ParamVisit<T>,
        grads: &BTreeMap<String, ArrayD<T>>,
    ) {
        self.t += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let eps = T::of(self.eps);
        let bc1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::of(self.lr);
        model.visit_mut(&mut |name, value| {
            let Some(g) = grads.get(name) else { return };
            debug_assert_eq!(g.shape(), value.shape(), "gradient shape for {name}");
            let (m, v) = self
                .state
                .entry(name.to_string())
                .or_insert_with(|| (ArrayD::zeros(value.raw_dim()), ArrayD::zeros(value.raw_dim())));
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w = *w - lr * mhat / (vhat.sqrt() + eps);
                });
        });
    }
}
