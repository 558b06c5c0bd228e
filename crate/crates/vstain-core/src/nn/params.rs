//! Named-parameter traversal shared by the optimizer, checkpoints, and
//! the frozen-weight hash checks.

use ndarray::ArrayD;
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;

/// Visits the parameter tensors of a model in a stable order. The
/// visit order defines serialization order.
pub trait ParamVisit<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>));
}

pub fn param_count<T: Scalar>(model: &dyn ParamVisit<T>) -> usize {
    let mut n = 0;
    model.visit(&mut |_, a| n += a.len());
    n
}

/// SHA-256 over names, shapes, and `f32` little-endian payloads of all
/// parameters in visit order. This is the identity used to assert
/// frozen stages stay frozen.
pub fn param_hash<T: Scalar>(model: &dyn ParamVisit<T>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    model.visit(&mut |name, a| {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update((a.ndim() as u32).to_le_bytes());
        for &d in a.shape() {
            hasher.update((d as u32).to_le_bytes());
        }
        for &v in a.iter() {
            hasher.update(v.as_f32().to_le_bytes());
        }
    });
    hasher.finalize().into()
}

/// Elementwise comparison of two models' parameters.
pub fn params_allclose<T: Scalar>(
    a: &dyn ParamVisit<T>,
    b: &dyn ParamVisit<T>,
    tol: f64,
) -> bool {
    let mut lhs = Vec::new();
    a.visit(&mut |name, t| lhs.push((name.to_string(), t.clone())));
    let mut ok = true;
    let mut i = 0;
    b.visit(&mut |name, t| {
        if i >= lhs.len() || lhs[i].0 != name || lhs[i].1.shape() != t.shape() {
            ok = false;
        } else {
            let far = lhs[i]
                .1
                .iter()
                .zip(t.iter())
                .any(|(x, y)| (x.as_f64() - y.as_f64()).abs() > tol);
            if far {
                ok = false;
            }
        }
        i += 1;
    });
    ok && i == lhs.len()
}
