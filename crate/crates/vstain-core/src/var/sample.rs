//! Token sampling strategies for scale-by-scale decoding.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Decoding strategy. Greedy is the default; it makes inference fully
/// deterministic. Temperature and top-k sampling are seed-driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleStrategy {
    Greedy,
    Temperature(f64),
    TopK { k: usize, temperature: f64 },
}

impl SampleStrategy {
    pub fn validate(&self, vocab: usize) -> Result<(), String> {
        match *self {
            SampleStrategy::Greedy => Ok(()),
            SampleStrategy::Temperature(t) => {
                if t > 0.0 && t.is_finite() {
                    Ok(())
                } else {
                    Err(format!("temperature must be positive, got {t}"))
                }
            }
            SampleStrategy::TopK { k, temperature } => {
                if k == 0 || k > vocab {
                    Err(format!("top-k {k} outside 1..={vocab}"))
                } else if temperature <= 0.0 || !temperature.is_finite() {
                    Err(format!("temperature must be positive, got {temperature}"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

fn argmax_lowest<T: Scalar>(row: &[T]) -> u32 {
    let mut best = 0usize;
    let mut best_v = T::neg_infinity();
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best as u32
}

fn categorical<T: Scalar>(probs: &[(usize, f64)], rng: &mut ChaCha8Rng) -> u32 {
    let total: f64 = probs.iter().map(|&(_, p)| p).sum();
    let mut dart = rng.random::<f64>() * total;
    for &(i, p) in probs {
        dart -= p;
        if dart <= 0.0 {
            return i as u32;
        }
    }
    probs.last().map(|&(i, _)| i as u32).unwrap_or(0)
}

/// Samples one index per row of a `(P, V)` logit matrix.
pub fn sample_scale<T: Scalar>(
    logits: &Array2<T>,
    strategy: SampleStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>, String> {
    strategy.validate(logits.ncols())?;
    let mut out = Vec::with_capacity(logits.nrows());
    for row in logits.rows() {
        let slice: Vec<T> = row.iter().copied().collect();
        let idx = match strategy {
            SampleStrategy::Greedy => argmax_lowest(&slice),
            SampleStrategy::Temperature(t) => {
                let scaled: Vec<f64> = slice.iter().map(|&v| v.as_f64() / t).collect();
                let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let probs: Vec<(usize, f64)> = scaled
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (i, (v - m).exp()))
                    .collect();
                categorical::<T>(&probs, rng)
            }
            SampleStrategy::TopK { k, temperature } => {
                let mut order: Vec<usize> = (0..slice.len()).collect();
                // Descending by logit; ties keep the lower index first.
                order.sort_by(|&a, &b| {
                    slice[b]
                        .partial_cmp(&slice[a])
                        .unwrap()
                        .then(a.cmp(&b))
                });
                let kept = &order[..k];
                if k == 1 {
                    kept[0] as u32
                } else {
                    let m = slice[kept[0]].as_f64() / temperature;
                    let probs: Vec<(usize, f64)> = kept
                        .iter()
                        .map(|&i| (i, (slice[i].as_f64() / temperature - m).exp()))
                        .collect();
                    categorical::<T>(&probs, rng)
                }
            }
        };
        out.push(idx);
    }
    Ok(out)
}
