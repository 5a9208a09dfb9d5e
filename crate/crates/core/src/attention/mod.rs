//! Multi-head attention: fused prefill schedules and decoupled decode.

pub mod decode;
pub mod prefill;

pub use decode::{
    decode_aggregate, decode_attention, decode_scores, lm_head, quant_matvec, softmax_vector,
    KvCache, LogitVector, MatvecRows,
};
pub use prefill::{
    dense_schedule_attention, naive_causal_attention, reverse_prefill_attention, FusionState,
    PrefillBatch,
};

/// Widened int8 dot product; exact in i32 for the supported dimensions.
#[inline]
pub(crate) fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    debug_assert_eq!(a.len(), b.len());
    let mut sum = 0i32;
    for (&x, &y) in a.iter().zip(b) {
        sum += x as i32 * y as i32;
    }
    sum
}

/// One attention score in fp32. Every phase routes through this so prefill
/// and decode see bit-identical scores for identical quantized inputs.
#[inline]
pub(crate) fn scaled_score(dot: i32, q_scale: f32, k_scale: f32, softmax_scale: f32) -> f32 {
    dot as f32 * (q_scale * k_scale * softmax_scale)
}
