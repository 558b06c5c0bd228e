//! The multi-scale residual quantizer as tape operations, with
//! straight-through gradients. Mirrors the pure `rvq` path exactly,
//! which is what the telescoping and straight-through property tests
//! rely on.

use ndarray::{Array2, ArrayD};

use crate::domain::{Codebook, ScaleSchedule};
use crate::nn::{LinearLayer, Tape, Var};
use crate::scalar::Scalar;

/// Per-scale products of one encoding pass on the tape.
pub struct RvqTapeResult<T: Scalar> {
    /// Aggregated quantized feature, `(N, C, H, W)`.
    pub aggregate: Var,
    /// Remaining residual after the last scale.
    pub final_residual: Var,
    /// Token grids: `tokens[k][n]` is the scale-`k` grid of sample `n`.
    pub tokens: Vec<Vec<Array2<u32>>>,
    /// Pre-quantization vectors fed to the quantizer at each scale
    /// (`(N, C, h_k, w_k)` values), for EMA statistics.
    pub quantizer_inputs: Vec<ArrayD<T>>,
}

/// Encodes a `(N, C, H, W)` feature batch against the codebook with
/// straight-through quantization; `projections` are applied per scale
/// (bound trainably when `trainable_proj`).
pub fn rvq_encode_op<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    codebook: &Codebook<T>,
    schedule: &ScaleSchedule,
    projections: &[LinearLayer<T>],
    trainable_proj: bool,
) -> RvqTapeResult<T> {
    let shape = tape.value(features).shape().to_vec();
    let (grid_h, grid_w) = (shape[2], shape[3]);
    assert_eq!(shape[1], codebook.dim(), "channel agreement");
    assert_eq!(projections.len(), schedule.num_scales());

    let mut residual = features;
    let mut aggregate: Option<Var> = None;
    let mut tokens = Vec::with_capacity(schedule.num_scales());
    let mut quantizer_inputs = Vec::with_capacity(schedule.num_scales());

    for (k, &(h, w)) in schedule.scales().iter().enumerate() {
        let down = tape.resize_bilinear(residual, h, w);
        quantizer_inputs.push(tape.value(down).clone());
        let (z, grids) = tape.ste_quantize(down, codebook);
        tokens.push(grids);
        let up = tape.resize_bilinear(z, grid_h, grid_w);
        // phi_k: pointwise channel map, applied channel-last.
        let perm = tape.permute(up, &[0, 2, 3, 1]);
        let proj = projections[k].forward(tape, perm, trainable_proj);
        let contribution = tape.permute(proj, &[0, 3, 1, 2]);
        residual = tape.sub(residual, contribution);
        aggregate = Some(match aggregate {
            None => contribution,
            Some(acc) => tape.add(acc, contribution),
        });
    }

    RvqTapeResult {
        aggregate: aggregate.expect("schedule non-empty"),
        final_residual: residual,
        tokens,
        quantizer_inputs,
    }
}
