//! EMA codebook maintenance and data-dependent initialization.

use ndarray::{Array2, ArrayD, Ix4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::VqVae;
use crate::scalar::Scalar;

/// Box-Muller standard normal from a seeded stream.
pub fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl<T: Scalar> VqVae<T> {
    /// Exponential-moving-average codebook update from one batch of
    /// quantizer inputs and their assignments. Codewords with no
    /// assignments in the batch are left untouched.
    pub fn ema_update(
        &mut self,
        quantizer_inputs: &[ArrayD<T>],
        tokens: &[Vec<ndarray::Array2<u32>>],
    ) {
        let c = self.cfg.latent_channels;
        let v = self.cfg.vocab;
        let decay = T::of(self.cfg.ema_decay);
        let one = T::one();

        let mut batch_counts = vec![T::zero(); v];
        let mut batch_sums = Array2::<T>::zeros((v, c));
        for (inputs, grids) in quantizer_inputs.iter().zip(tokens) {
            let x4 = inputs.view().into_dimensionality::<Ix4>().unwrap();
            let (n, _, h, w) = x4.dim();
            for ni in 0..n {
                let grid = &grids[ni];
                for y in 0..h {
                    for x in 0..w {
                        let idx = grid[[y, x]] as usize;
                        batch_counts[idx] += one;
                        for ch in 0..c {
                            batch_sums[[idx, ch]] += x4[[ni, ch, y, x]];
                        }
                    }
                }
            }
        }

        for i in 0..v {
            if batch_counts[i] == T::zero() {
                continue;
            }
            self.ema_counts[i] = decay * self.ema_counts[i] + (one - decay) * batch_counts[i];
            for ch in 0..c {
                self.ema_sums[[i, ch]] =
                    decay * self.ema_sums[[i, ch]] + (one - decay) * batch_sums[[i, ch]];
            }
            let denom = self.ema_counts[i].max(T::of(1e-8));
            for ch in 0..c {
                self.codebook[[i, ch]] = self.ema_sums[[i, ch]] / denom;
            }
        }
    }

    /// Replaces the random codebook with vectors drawn from an encoder
    /// feature pool (rows of `(P, C)`), with a small seeded jitter so
    /// rows are pairwise distinct.
    pub fn init_codebook_from_pool(&mut self, pool: &Array2<T>, rng: &mut ChaCha8Rng) {
        let v = self.cfg.vocab;
        let c = self.cfg.latent_channels;
        assert_eq!(pool.ncols(), c);
        let p = pool.nrows();
        assert!(p > 0, "feature pool must be non-empty");
        for i in 0..v {
            let row = if p >= v {
                // Deterministic stratified pick plus jitter.
                i * p / v
            } else {
                rng.random_range(0..p)
            };
            for ch in 0..c {
                let jitter = T::of(normal_sample(rng) * 1e-4);
                self.codebook[[i, ch]] = pool[[row, ch]] + jitter;
            }
        }
        self.ema_counts.fill(T::one());
        self.ema_sums.assign(&self.codebook);
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_cfg;
    use super::super::VqVae;
    use ndarray::{Array2, ArrayD, IxDyn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ema_moves_used_codewords_toward_assignments_only() {
        let mut vq = VqVae::<f64>::new(tiny_cfg(), 9);
        let before = vq.codebook.clone();

        // One scale, one sample, 1x1 grid: a single vector assigned to
        // codeword 3.
        let target = [1.0, 2.0, 3.0, 4.0];
        let inputs = vec![ArrayD::from_shape_vec(
            IxDyn(&[1, 4, 1, 1]),
            target.to_vec(),
        )
        .unwrap()];
        let grids = vec![vec![Array2::from_elem((1, 1), 3u32)]];
        vq.ema_update(&inputs, &grids);

        for i in 0..vq.cfg.vocab {
            if i == 3 {
                // Moved toward the assigned vector.
                for ch in 0..4 {
                    let moved = (vq.codebook[[i, ch]] - before[[i, ch]]).abs();
                    assert!(moved > 0.0, "assigned codeword must move");
                    let toward = (vq.codebook[[i, ch]] - target[ch]).abs()
                        < (before[[i, ch]] - target[ch]).abs();
                    assert!(toward, "assigned codeword must move toward its vectors");
                }
            } else {
                // Unused codewords unchanged, bitwise.
                for ch in 0..4 {
                    assert_eq!(vq.codebook[[i, ch]], before[[i, ch]]);
                }
            }
        }
    }

    #[test]
    fn pool_init_produces_distinct_rows() {
        let mut vq = VqVae::<f64>::new(tiny_cfg(), 10);
        let pool = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        vq.init_codebook_from_pool(&pool, &mut rng);
        let cb = vq.codebook_domain();
        assert!(cb.duplicate_rows(1e-9).is_empty());
    }
}
