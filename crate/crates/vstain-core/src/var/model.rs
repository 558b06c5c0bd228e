//! Decoder-only transformer over flattened multi-scale token
//! sequences with block-causal attention and AdaLN conditioning.
//!
//! Sequence layout: block `k` (0-based) holds `h_{k+1} * w_{k+1}`
//! positions and predicts the tokens of scale `k+1`. Block 0's content
//! is the embedded start map; block `k >= 1` embeds the upsampled
//! aggregate of all coarser scales resampled to scale `k+1`'s grid, so
//! a position's input never encodes its own scale's tokens. Attention
//! allows blocks `<=` own, which keeps every scale's logits a function
//! of strictly coarser tokens plus the start map and global context.

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GlobalContext, StartMap};
use crate::domain::{Codebook, ScaleProjection, ScaleSchedule, TokenPyramid};
use crate::nn::normal_init;
use crate::nn::{LinearLayer, ParamVisit, Tape, Var};
use crate::rvq::{bilinear_resize, lookup};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub vocab: usize,
    /// Latent channel width of the tokenizer (input cells and context).
    pub latent_channels: usize,
    pub schedule: ScaleSchedule,
    /// Encoder grid the aggregates live on.
    pub grid: (usize, usize),
}

impl Default for VarConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            vocab: 4096,
            latent_channels: 32,
            schedule: ScaleSchedule::default(),
            grid: (16, 16),
        }
    }
}

/// Position bookkeeping for the flattened multi-scale sequence.
#[derive(Debug, Clone)]
pub struct SequenceLayout {
    /// `(start, len)` of each block in the flat sequence.
    pub blocks: Vec<(usize, usize)>,
    pub total: usize,
}

impl SequenceLayout {
    pub fn new(schedule: &ScaleSchedule) -> Self {
        let mut blocks = Vec::with_capacity(schedule.num_scales());
        let mut at = 0;
        for &(h, w) in schedule.scales() {
            blocks.push((at, h * w));
            at += h * w;
        }
        Self { blocks, total: at }
    }

    pub fn block_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(|&(_, len)| len).collect()
    }

    /// Length of the sequence truncated to the first `k` blocks.
    pub fn prefix_len(&self, k: usize) -> usize {
        self.blocks[..k].iter().map(|&(_, len)| len).sum()
    }

    /// Block-causal additive mask for the first `len` positions:
    /// 0 where attention is allowed, a large negative value otherwise.
    pub fn mask<T: Scalar>(&self, len: usize) -> Array2<T> {
        let block_of: Vec<usize> = self
            .blocks
            .iter()
            .enumerate()
            .flat_map(|(b, &(_, l))| std::iter::repeat(b).take(l))
            .collect();
        let neg = T::of(-1e30);
        Array2::from_shape_fn((len, len), |(i, j)| {
            if block_of[j] <= block_of[i] {
                T::zero()
            } else {
                neg
            }
        })
    }
}

struct AdaLnPair<T: Scalar> {
    shift: LinearLayer<T>,
    scale: LinearLayer<T>,
}

impl<T: Scalar> AdaLnPair<T> {
    fn new(name: &str, ctx_dim: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut shift = LinearLayer::zeros(&format!("{name}.shift"), ctx_dim, dim);
        let mut scale = LinearLayer::zeros(&format!("{name}.scale"), ctx_dim, dim);
        // Small nonzero weights keep the conditioning pathway live at
        // initialization; zero biases make zero context reduce to the
        // plain layer norm.
        shift.w = normal_init(rng, &[ctx_dim, dim], 0.02);
        scale.w = normal_init(rng, &[ctx_dim, dim], 0.02);
        Self { shift, scale }
    }

    /// `ln(x) * (1 + scale(ctx)) + shift(ctx)` over `(N, L, D)`.
    fn modulate(&self, tape: &mut Tape<T>, x: Var, ctx: Var, trainable: bool) -> Var {
        let normed = tape.layer_norm_last(x, 1e-5);
        let shift = self.shift.forward(tape, ctx, trainable);
        let scale = self.scale.forward(tape, ctx, trainable);
        let scale1 = tape.add_scalar(scale, 1.0);
        let y = tape.row_mul(normed, scale1);
        tape.row_add(y, shift)
    }
}

impl<T: Scalar> ParamVisit<T> for AdaLnPair<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.shift.visit(f);
        self.scale.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.shift.visit_mut(f);
        self.scale.visit_mut(f);
    }
}

struct Block<T: Scalar> {
    ada1: AdaLnPair<T>,
    q: LinearLayer<T>,
    k: LinearLayer<T>,
    v: LinearLayer<T>,
    o: LinearLayer<T>,
    ada2: AdaLnPair<T>,
    fc1: LinearLayer<T>,
    fc2: LinearLayer<T>,
}

impl<T: Scalar> ParamVisit<T> for Block<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.ada1.visit(f);
        self.q.visit(f);
        self.k.visit(f);
        self.v.visit(f);
        self.o.visit(f);
        self.ada2.visit(f);
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.ada1.visit_mut(f);
        self.q.visit_mut(f);
        self.k.visit_mut(f);
        self.v.visit_mut(f);
        self.o.visit_mut(f);
        self.ada2.visit_mut(f);
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

pub struct VarTransformer<T: Scalar> {
    pub cfg: VarConfig,
    pub layout: SequenceLayout,
    start_embed: LinearLayer<T>,
    in_proj: LinearLayer<T>,
    pos: ArrayD<T>,
    scale_emb: ArrayD<T>,
    blocks: Vec<Block<T>>,
    final_gamma: ArrayD<T>,
    final_beta: ArrayD<T>,
    head: LinearLayer<T>,
}

impl<T: Scalar> VarTransformer<T> {
    pub fn new(cfg: VarConfig, seed: u64) -> Self {
        assert_eq!(cfg.dim % cfg.heads, 0, "heads divide dim");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = SequenceLayout::new(&cfg.schedule);
        let c = cfg.latent_channels;
        let d = cfg.dim;
        let start_embed = LinearLayer::new("var.start_embed", c, d, &mut rng);
        let in_proj = LinearLayer::new("var.in_proj", c, d, &mut rng);
        let pos = normal_init(&mut rng, &[layout.total, d], 0.02);
        let scale_emb = normal_init(&mut rng, &[cfg.schedule.num_scales(), d], 0.02);
        let blocks = (0..cfg.layers)
            .map(|i| {
                let p = format!("var.b{i}");
                Block {
                    ada1: AdaLnPair::new(&format!("{p}.ada1"), c, d, &mut rng),
                    q: LinearLayer::new(&format!("{p}.q"), d, d, &mut rng),
                    k: LinearLayer::new(&format!("{p}.k"), d, d, &mut rng),
                    v: LinearLayer::new(&format!("{p}.v"), d, d, &mut rng),
                    o: LinearLayer::new(&format!("{p}.o"), d, d, &mut rng),
                    ada2: AdaLnPair::new(&format!("{p}.ada2"), c, d, &mut rng),
                    fc1: LinearLayer::new(&format!("{p}.fc1"), d, d * cfg.mlp_ratio, &mut rng),
                    fc2: LinearLayer::new(&format!("{p}.fc2"), d * cfg.mlp_ratio, d, &mut rng),
                }
            })
            .collect();
        let final_gamma = ArrayD::from_elem(IxDyn(&[d]), T::one());
        let final_beta = ArrayD::zeros(IxDyn(&[d]));
        let head = LinearLayer::new("var.head", d, cfg.vocab, &mut rng);
        Self {
            cfg,
            layout,
            start_embed,
            in_proj,
            pos,
            scale_emb,
            blocks,
            final_gamma,
            final_beta,
            head,
        }
    }

    /// Builds the flat `(L_prefix, C)` input rows for one sample from
    /// the start map and the tokens of already-available scales.
    /// With `j` scales of tokens provided, inputs for blocks `0..=j`
    /// (capped at the last block) are produced.
    pub fn build_input_rows(
        &self,
        start: &StartMap<T>,
        tokens: &[Array2<u32>],
        codebook: &Codebook<T>,
        proj: &ScaleProjection<T>,
    ) -> Array2<T> {
        let c = self.cfg.latent_channels;
        let schedule = &self.cfg.schedule;
        let k_total = schedule.num_scales();
        let blocks_present = (tokens.len() + 1).min(k_total);
        assert_eq!(start.grid(), schedule.coarsest(), "start map grid");
        assert_eq!(start.channels(), c, "start map channels");

        let total: usize = schedule.scales()[..blocks_present]
            .iter()
            .map(|&(h, w)| h * w)
            .sum();
        let mut rows = Array2::<T>::zeros((total, c));
        // Block 0: raw start cells.
        let (h1, w1) = schedule.coarsest();
        let mut at = 0;
        for y in 0..h1 {
            for x in 0..w1 {
                for ch in 0..c {
                    rows[[at, ch]] = start.data()[[ch, y, x]];
                }
                at += 1;
            }
        }
        // Blocks 1..: resampled running aggregate of coarser scales.
        let (gh, gw) = self.cfg.grid;
        let mut agg = ndarray::Array3::<T>::zeros((c, gh, gw));
        for b in 1..blocks_present {
            let grid = &tokens[b - 1];
            let z = lookup(grid, codebook);
            let up = bilinear_resize(&z, gh, gw);
            agg = &agg + &proj.apply(b - 1, &up);
            let (hb, wb) = schedule.scales()[b];
            let down = bilinear_resize(&agg, hb, wb);
            for y in 0..hb {
                for x in 0..wb {
                    for ch in 0..c {
                        rows[[at, ch]] = down[[ch, y, x]];
                    }
                    at += 1;
                }
            }
        }
        debug_assert_eq!(at, total);
        rows
    }

    /// Transformer forward over a (possibly truncated) sequence.
    /// `inputs` is `(N, L_prefix, C)` with block 0 first; `ctx` is
    /// `(N, C)`. Returns logits `(N, L_prefix, V)`.
    pub fn forward_seq(
        &self,
        tape: &mut Tape<T>,
        inputs: Var,
        ctx: Var,
        blocks_present: usize,
        trainable: bool,
    ) -> Var {
        let shape = tape.value(inputs).shape().to_vec();
        let (n, l) = (shape[0], shape[1]);
        assert_eq!(shape[2], self.cfg.latent_channels);
        assert_eq!(l, self.layout.prefix_len(blocks_present), "prefix length");
        let d = self.cfg.dim;
        let heads = self.cfg.heads;
        let dh = d / heads;

        // Start block uses its own embedding; later blocks share the
        // aggregate embedding.
        let (l1, _) = (self.layout.blocks[0].1, ());
        let start_rows = tape.reshape(inputs, &[n * l, self.cfg.latent_channels]);
        let _ = start_rows;
        let x = if blocks_present == 1 {
            self.start_embed.forward(tape, inputs, trainable)
        } else {
            // Split along the sequence axis by re-slicing the constant
            // input: embed both and concatenate.
            let head_part = tape.slice_mid(inputs, 0, l1);
            let tail_part = tape.slice_mid(inputs, l1, l - l1);
            let e0 = self.start_embed.forward(tape, head_part, trainable);
            let e1 = self.in_proj.forward(tape, tail_part, trainable);
            tape.concat(1, e0, e1)
        };

        // Positional + scale embeddings for the present prefix.
        let pos_full = tape.bind("var.pos", &self.pos, trainable);
        let pos = tape.slice_rows(pos_full, 0, l);
        let x = tape.add_seq_bias(x, pos);
        let scale_full = tape.bind("var.scale_emb", &self.scale_emb, trainable);
        let mut counts = vec![0usize; self.cfg.schedule.num_scales()];
        for (b, cnt) in self.layout.block_counts().iter().enumerate() {
            if b < blocks_present {
                counts[b] = *cnt;
            }
        }
        let scale_rows = tape.repeat_rows(scale_full, &counts);
        let mut x = tape.add_seq_bias(x, scale_rows);

        let mask = self.layout.mask::<T>(l);
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for block in &self.blocks {
            let h = block.ada1.modulate(tape, x, ctx, trainable);
            let q = block.q.forward(tape, h, trainable);
            let k = block.k.forward(tape, h, trainable);
            let v = block.v.forward(tape, h, trainable);
            let to_heads = |tape: &mut Tape<T>, t: Var| {
                let t = tape.reshape(t, &[n, l, heads, dh]);
                let t = tape.permute(t, &[0, 2, 1, 3]);
                tape.reshape(t, &[n * heads, l, dh])
            };
            let qh = to_heads(tape, q);
            let kh = to_heads(tape, k);
            let vh = to_heads(tape, v);
            let scores = tape.bmm(qh, kh, true);
            let scores = tape.scale(scores, inv_sqrt);
            let scores = tape.add_mask(scores, mask.clone());
            let attn = tape.softmax_last(scores);
            let ctxv = tape.bmm(attn, vh, false);
            let ctxv = tape.reshape(ctxv, &[n, heads, l, dh]);
            let ctxv = tape.permute(ctxv, &[0, 2, 1, 3]);
            let ctxv = tape.reshape(ctxv, &[n, l, d]);
            let attn_out = block.o.forward(tape, ctxv, trainable);
            x = tape.add(x, attn_out);

            let h2 = block.ada2.modulate(tape, x, ctx, trainable);
            let m = block.fc1.forward(tape, h2, trainable);
            let m = tape.silu(m);
            let m = block.fc2.forward(tape, m, trainable);
            x = tape.add(x, m);
        }

        let normed = tape.layer_norm_last(x, 1e-5);
        let gamma = tape.bind("var.final.gamma", &self.final_gamma, trainable);
        let beta = tape.bind("var.final.beta", &self.final_beta, trainable);
        let normed = tape.mul_last(normed, gamma);
        let normed = tape.bias_last(normed, beta);
        self.head.forward(tape, normed, trainable)
    }

    /// Teacher-forced logits for every scale, conditioned on the start
    /// map, global context, and strictly coarser ground-truth tokens.
    /// Returns one `(h_k * w_k, V)` matrix per scale.
    pub fn forward_teacher_forced(
        &self,
        pyramid: &TokenPyramid,
        start: &StartMap<T>,
        ctx: &GlobalContext<T>,
        codebook: &Codebook<T>,
        proj: &ScaleProjection<T>,
    ) -> Vec<Array2<T>> {
        assert_eq!(
            pyramid.schedule(),
            &self.cfg.schedule,
            "pyramid schedule mismatch"
        );
        let k = self.cfg.schedule.num_scales();
        let rows = self.build_input_rows(start, &pyramid.indices()[..k - 1], codebook, proj);
        let (l, c) = rows.dim();
        let mut tape = Tape::<T>::no_grad();
        let inputs = tape.constant(rows.into_shape_with_order(IxDyn(&[1, l, c])).unwrap());
        let ctxv = tape.constant(
            ctx.data()
                .clone()
                .into_shape_with_order(IxDyn(&[1, self.cfg.latent_channels]))
                .unwrap(),
        );
        let logits = self.forward_seq(&mut tape, inputs, ctxv, k, false);
        let lv = tape.value(logits);
        let v = self.cfg.vocab;
        self.layout
            .blocks
            .iter()
            .map(|&(start_at, len)| {
                Array2::from_shape_fn((len, v), |(i, j)| lv[[0, start_at + i, j]])
            })
            .collect()
    }
}

impl<T: Scalar> ParamVisit<T> for VarTransformer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<T>)) {
        self.start_embed.visit(f);
        self.in_proj.visit(f);
        f("var.pos", &self.pos);
        f("var.scale_emb", &self.scale_emb);
        for b in &self.blocks {
            b.visit(f);
        }
        f("var.final.gamma", &self.final_gamma);
        f("var.final.beta", &self.final_beta);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        self.start_embed.visit_mut(f);
        self.in_proj.visit_mut(f);
        f("var.pos", &mut self.pos);
        f("var.scale_emb", &mut self.scale_emb);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        f("var.final.gamma", &mut self.final_gamma);
        f("var.final.beta", &mut self.final_beta);
        self.head.visit_mut(f);
    }
}

/// Flattens a batch of `(L, C)` row matrices into `(N, L, C)`.
pub(crate) fn stack_rows<T: Scalar>(rows: &[Array2<T>]) -> Array3<T> {
    let (l, c) = rows[0].dim();
    let mut out = Array3::<T>::zeros((rows.len(), l, c));
    for (i, r) in rows.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i).assign(r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::var::{build_start_map, global_context};
    use ndarray::Array3;
    use rand::Rng;

    pub(crate) fn tiny_cfg() -> VarConfig {
        VarConfig {
            dim: 16,
            layers: 2,
            heads: 2,
            mlp_ratio: 2,
            vocab: 7,
            latent_channels: 3,
            schedule: ScaleSchedule::new(vec![(1, 1), (2, 2), (3, 3)]),
            grid: (3, 3),
        }
    }

    pub(crate) fn tiny_world(
        seed: u64,
    ) -> (
        VarTransformer<f64>,
        Codebook<f64>,
        ScaleProjection<f64>,
        TokenPyramid,
        StartMap<f64>,
        GlobalContext<f64>,
    ) {
        let cfg = tiny_cfg();
        let model = VarTransformer::new(cfg.clone(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let cb = Codebook::new(Array2::from_shape_fn((cfg.vocab, 3), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap();
        let proj = ScaleProjection::identity(3, 3);
        let grids: Vec<Array2<u32>> = cfg
            .schedule
            .scales()
            .iter()
            .map(|&(h, w)| {
                Array2::from_shape_fn((h, w), |_| rng.random_range(0..cfg.vocab) as u32)
            })
            .collect();
        let pyramid =
            TokenPyramid::new(cfg.schedule.clone(), grids, cb.content_hash(), cfg.vocab).unwrap();
        let f_pred = crate::domain::FeatureMap::new(Array3::from_shape_fn((3, 3, 3), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap();
        let start = build_start_map(&f_pred, &cfg.schedule);
        let ctx = global_context(&f_pred);
        (model, cb, proj, pyramid, start, ctx)
    }

    #[test]
    fn logits_have_per_scale_shapes() {
        let (model, cb, proj, pyramid, start, ctx) = tiny_world(3);
        let logits = model.forward_teacher_forced(&pyramid, &start, &ctx, &cb, &proj);
        assert_eq!(logits.len(), 3);
        assert_eq!(logits[0].dim(), (1, 7));
        assert_eq!(logits[1].dim(), (4, 7));
        assert_eq!(logits[2].dim(), (9, 7));
        for l in &logits {
            assert!(l.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn perturbing_scale_k_tokens_leaves_scales_up_to_k_unchanged() {
        let (model, cb, proj, pyramid, start, ctx) = tiny_world(4);
        let base = model.forward_teacher_forced(&pyramid, &start, &ctx, &cb, &proj);
        for k in 0..3 {
            // Perturb every token of scale k.
            let mut grids: Vec<Array2<u32>> = pyramid.indices().to_vec();
            grids[k].mapv_inplace(|t| (t + 1) % 7);
            let perturbed = TokenPyramid::new(
                pyramid.schedule().clone(),
                grids,
                pyramid.codebook_hash(),
                7,
            )
            .unwrap();
            let out = model.forward_teacher_forced(&perturbed, &start, &ctx, &cb, &proj);
            for j in 0..3 {
                let same = base[j]
                    .iter()
                    .zip(out[j].iter())
                    .all(|(a, b)| (a - b).abs() < 1e-12);
                if j <= k {
                    assert!(same, "scale {j} logits must ignore scale {k} tokens");
                } else if j == k + 1 {
                    assert!(!same, "scale {j} logits must depend on scale {k} tokens");
                }
            }
        }
    }

    #[test]
    fn perturbing_start_map_changes_scale_one_logits() {
        let (model, cb, proj, pyramid, start, ctx) = tiny_world(5);
        let base = model.forward_teacher_forced(&pyramid, &start, &ctx, &cb, &proj);
        let mut data = start.data().clone();
        data[[0, 0, 0]] += 0.5;
        let start2 = super::super::StartMap { data };
        let out = model.forward_teacher_forced(&pyramid, &start2, &ctx, &cb, &proj);
        let changed = base[0]
            .iter()
            .zip(out[0].iter())
            .any(|(a, b)| (a - b).abs() > 1e-9);
        assert!(changed, "start map conditioning must be live");
    }

    #[test]
    fn different_global_context_changes_logits() {
        let (model, cb, proj, pyramid, start, ctx) = tiny_world(6);
        let base = model.forward_teacher_forced(&pyramid, &start, &ctx, &cb, &proj);
        let ctx2 = GlobalContext {
            data: ctx.data().mapv(|v| v + 1.0),
        };
        let out = model.forward_teacher_forced(&pyramid, &start, &ctx2, &cb, &proj);
        let changed = (0..3).any(|k| {
            base[k]
                .iter()
                .zip(out[k].iter())
                .any(|(a, b)| (a - b).abs() > 1e-9)
        });
        assert!(changed, "conditioning must not be dead");
    }

    #[test]
    fn zero_context_with_zeroed_modulation_reduces_to_plain_layer_norm() {
        let (mut model, cb, proj, pyramid, start, _ctx) = tiny_world(7);
        // Zero out every modulation projection: AdaLN becomes LN.
        model.visit_mut(&mut |name, t| {
            if name.contains(".ada") {
                t.fill(0.0);
            }
        });
        let zero_ctx = GlobalContext::zeros(3);
        let with_zero_mod = model.forward_teacher_forced(&pyramid, &start, &zero_ctx, &cb, &proj);

        // Context value is irrelevant once modulation weights are zero,
        // confirming the formula reduces to unconditioned layer norm.
        let other_ctx = GlobalContext {
            data: ndarray::Array1::from_vec(vec![3.0, -2.0, 0.5]),
        };
        let with_other_ctx =
            model.forward_teacher_forced(&pyramid, &start, &other_ctx, &cb, &proj);
        for k in 0..3 {
            for (a, b) in with_zero_mod[k].iter().zip(with_other_ctx[k].iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factorization_sum_of_prefix_conditionals_matches_full_pass() {
        let (model, cb, proj, pyramid, start, ctx) = tiny_world(8);
        let full = model.forward_teacher_forced(&pyramid, &start, &ctx, &cb, &proj);
        let logprob = |logits: &Array2<f64>, grid: &Array2<u32>| -> f64 {
            let mut total = 0.0;
            for (i, &t) in grid.iter().enumerate() {
                let row = logits.row(i);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
                total += row[t as usize] - lse;
            }
            total
        };
        let full_ll: f64 = (0..3)
            .map(|k| logprob(&full[k], pyramid.scale(k)))
            .sum();

        // One scale at a time with truncated prefixes.
        let mut sum_ll = 0.0;
        for k in 0..3 {
            let rows = model.build_input_rows(&start, &pyramid.indices()[..k], &cb, &proj);
            let (l, c) = rows.dim();
            let mut tape = Tape::<f64>::no_grad();
            let inputs =
                tape.constant(rows.into_shape_with_order(IxDyn(&[1, l, c])).unwrap());
            let ctxv = tape.constant(
                ctx.data()
                    .clone()
                    .into_shape_with_order(IxDyn(&[1, 3]))
                    .unwrap(),
            );
            let logits = model.forward_seq(&mut tape, inputs, ctxv, k + 1, false);
            let lv = tape.value(logits);
            let (start_at, len) = model.layout.blocks[k];
            let block_logits =
                Array2::from_shape_fn((len, 7), |(i, j)| lv[[0, start_at + i, j]]);
            sum_ll += logprob(&block_logits, pyramid.scale(k));
        }
        assert!(
            (full_ll - sum_ll).abs() < 1e-9,
            "factorization mismatch: {full_ll} vs {sum_ll}"
        );
    }
}
