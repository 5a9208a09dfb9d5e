//! Fused normalization, quantization, activation, and rotary embedding.
//!
//! RMSNorm and absmax quantization are both two-pass traversals, so the
//! fused path folds all four logical steps (square-sum, max-find, normalize,
//! quantize) into exactly two passes over the input. The instrumented read
//! counter makes that contract testable.
//!
//! All quantization is symmetric int8 in [-127, 127] with round-half-even;
//! -128 never appears, so negation stays closed.

use crate::error::{Error, Result};
use crate::instrument;

pub const RMS_EPSILON: f32 = 1e-5;
pub const ROPE_THETA: f32 = 10000.0;

/// Elements processed per chunk on the vector paths, the software analogue
/// of moving 256-bit packets of int8 data.
pub const VECTOR_CHUNK: usize = 32;

/// RMSNorm parameters: learned per-channel scale and the stabilizer inside
/// the square root.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Vec<f32>,
    pub epsilon: f32,
}

impl NormParams {
    pub fn new(gamma: Vec<f32>, epsilon: f32) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Numeric(format!(
                "rmsnorm epsilon must be finite and positive, got {epsilon}"
            )));
        }
        Ok(Self { gamma, epsilon })
    }

    pub fn unit(n: usize) -> Self {
        Self {
            gamma: vec![1.0; n],
            epsilon: RMS_EPSILON,
        }
    }
}

#[inline]
fn round_half_even_i8(v: f32) -> i8 {
    let r = v.round_ties_even();
    if !(-127.0..=127.0).contains(&r) {
        instrument::count_saturation();
    }
    r.clamp(-127.0, 127.0) as i8
}

#[inline]
fn quantize_element(v: f32, inv_scale: f32) -> i8 {
    round_half_even_i8(v * inv_scale)
}

/// Standalone RMSNorm: `x_i * gamma_i / sqrt(mean(x^2) + eps)`.
pub fn rmsnorm(x: &[f32], params: &NormParams) -> Result<Vec<f32>> {
    if x.len() != params.gamma.len() {
        return Err(Error::shape(format!(
            "rmsnorm input length {} != gamma length {}",
            x.len(),
            params.gamma.len()
        )));
    }
    let rms = rms_value(x, params.epsilon);
    Ok(x.iter()
        .zip(&params.gamma)
        .map(|(&v, &g)| (v * g) / rms)
        .collect())
}

#[inline]
fn rms_value(x: &[f32], epsilon: f32) -> f32 {
    let mut sumsq = 0.0f32;
    for chunk in x.chunks(VECTOR_CHUNK) {
        for &v in chunk {
            sumsq += v * v;
        }
    }
    (sumsq / x.len() as f32 + epsilon).sqrt()
}

/// Fused RMSNorm + absmax quantization in two passes.
///
/// Pass 1 accumulates the square sum and tracks `max|x_i * gamma_i|` in the
/// same traversal; dividing the max by the RMS afterwards gives the same
/// absmax the unfused pipeline finds, bit for bit, because division by a
/// positive value is monotone. Pass 2 normalizes and quantizes each element.
///
/// Returns the int8 row and its dequantization scale (`amax / 127`). An
/// all-zero gamma-weighted input is defined to quantize to zeros with
/// scale 1.
pub fn rmsnorm_quant_fused(x: &[f32], params: &NormParams) -> Result<(Vec<i8>, f32)> {
    if x.len() != params.gamma.len() {
        return Err(Error::shape(format!(
            "rmsnorm input length {} != gamma length {}",
            x.len(),
            params.gamma.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::shape("rmsnorm input is empty"));
    }

    // Pass 1: square sum and gamma-weighted absolute max together.
    let mut sumsq = 0.0f32;
    let mut weighted_amax = 0.0f32;
    for (xc, gc) in x.chunks(VECTOR_CHUNK).zip(params.gamma.chunks(VECTOR_CHUNK)) {
        for (&v, &g) in xc.iter().zip(gc) {
            sumsq += v * v;
            weighted_amax = weighted_amax.max((v * g).abs());
        }
    }
    instrument::count_rms_reads(x.len() as u64);

    let rms = (sumsq / x.len() as f32 + params.epsilon).sqrt();
    if !rms.is_finite() {
        return Err(Error::Numeric("rmsnorm over non-finite input".into()));
    }
    let amax = weighted_amax / rms;
    if amax == 0.0 {
        instrument::count_rms_reads(x.len() as u64);
        return Ok((vec![0; x.len()], 1.0));
    }

    // Pass 2: normalize and quantize.
    let inv_scale = 127.0 / amax;
    let mut q = vec![0i8; x.len()];
    for ((qv, &v), &g) in q.iter_mut().zip(x).zip(&params.gamma) {
        *qv = quantize_element((v * g) / rms, inv_scale);
    }
    instrument::count_rms_reads(x.len() as u64);
    Ok((q, amax / 127.0))
}

/// Two-pass symmetric absmax quantization. All-zero input quantizes to
/// zeros with scale 1.
pub fn absmax_quantize(x: &[f32]) -> Result<(Vec<i8>, f32)> {
    let mut amax = 0.0f32;
    for &v in x {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("cannot quantize non-finite {v}")));
        }
        amax = amax.max(v.abs());
    }
    if amax == 0.0 {
        return Ok((vec![0; x.len()], 1.0));
    }
    let inv_scale = 127.0 / amax;
    let q = x.iter().map(|&v| quantize_element(v, inv_scale)).collect();
    Ok((q, amax / 127.0))
}

/// Dequantize an int8 row back to reals.
pub fn dequantize(q: &[i8], scale: f32) -> Vec<f32> {
    q.iter().map(|&v| v as f32 * scale).collect()
}

#[inline]
pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// In-place SiLU over a vector, the standalone form of the hook that
/// [`crate::matmul::dequantize_output_into`] fuses into the linear output
/// loop. Operates on the caller's buffer; nothing is materialized.
pub fn silu_fused(x: &mut [f32]) {
    for chunk in x.chunks_mut(VECTOR_CHUNK) {
        for v in chunk {
            *v = silu(*v);
        }
    }
}

/// Rotary position embedding tables: cos/sin per (position, pair), with the
/// standard frequency ladder `theta^(-2t/d)`.
#[derive(Debug, Clone)]
pub struct RopeParams {
    head_dim: usize,
    capacity: usize,
    cos: Vec<f32>,
    sin: Vec<f32>,
}

impl RopeParams {
    pub fn new(head_dim: usize, theta: f32, capacity: usize) -> Result<Self> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::config(format!(
                "rope head dim must be even and positive, got {head_dim}"
            )));
        }
        let pairs = head_dim / 2;
        let mut cos = Vec::with_capacity(capacity * pairs);
        let mut sin = Vec::with_capacity(capacity * pairs);
        for pos in 0..capacity {
            for t in 0..pairs {
                let freq = theta.powf(-2.0 * t as f32 / head_dim as f32);
                let angle = pos as f32 * freq;
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
        Ok(Self {
            head_dim,
            capacity,
            cos,
            sin,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Rotate one head's token rows in place. `x` is `[tokens x head_dim]`
/// row-major; `positions[i]` is the absolute position of row i.
pub fn rope_apply(x: &mut [f32], positions: &[usize], params: &RopeParams) -> Result<()> {
    let d = params.head_dim;
    if x.len() != positions.len() * d {
        return Err(Error::shape(format!(
            "rope input length {} != tokens {} * head_dim {d}",
            x.len(),
            positions.len()
        )));
    }
    let pairs = d / 2;
    for (row, &pos) in x.chunks_mut(d).zip(positions) {
        if pos >= params.capacity {
            return Err(Error::config(format!(
                "rope position {pos} beyond table capacity {}",
                params.capacity
            )));
        }
        let table = pos * pairs;
        for t in 0..pairs {
            let c = params.cos[table + t];
            let s = params.sin[table + t];
            let a = row[2 * t];
            let b = row[2 * t + 1];
            row[2 * t] = a * c - b * s;
            row[2 * t + 1] = a * s + b * c;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f32, b: f32, tol: f32) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_vector_quantizes_flat() {
        let params = NormParams::new(vec![1.0; 4], 1e-12).unwrap();
        let (q, scale) = rmsnorm_quant_fused(&[3.0, 3.0, 3.0, 3.0], &params).unwrap();
        assert_eq!(q, vec![127, 127, 127, 127]);
        assert!(close(scale, 1.0 / 127.0, 1e-9));
    }

    #[test]
    fn zero_vector_degenerate_case() {
        let params = NormParams::unit(5);
        let (q, scale) = rmsnorm_quant_fused(&[0.0; 5], &params).unwrap();
        assert_eq!(q, vec![0; 5]);
        assert_eq!(scale, 1.0);
        let (q2, s2) = absmax_quantize(&[0.0; 3]).unwrap();
        assert_eq!(q2, vec![0; 3]);
        assert_eq!(s2, 1.0);
    }

    #[test]
    fn fused_touches_each_element_exactly_twice() {
        crate::instrument::reset();
        let params = NormParams::unit(37);
        let x: Vec<f32> = (0..37).map(|i| (i as f32) * 0.3 - 5.0).collect();
        rmsnorm_quant_fused(&x, &params).unwrap();
        assert_eq!(crate::instrument::snapshot().rms_element_reads, 74);
    }

    #[test]
    fn fused_equals_unfused_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(40);
        for _ in 0..200 {
            let n = rng.random_range(1usize..=64);
            let x: Vec<f32> = (0..n).map(|_| rng.random_range(-4.0f32..4.0)).collect();
            let gamma: Vec<f32> = (0..n).map(|_| rng.random_range(0.5f32..1.5)).collect();
            let params = NormParams::new(gamma, RMS_EPSILON).unwrap();
            let (fused_q, fused_s) = rmsnorm_quant_fused(&x, &params).unwrap();
            let normed = rmsnorm(&x, &params).unwrap();
            let (unfused_q, unfused_s) = absmax_quantize(&normed).unwrap();
            assert_eq!(fused_q, unfused_q);
            assert_eq!(fused_s.to_bits(), unfused_s.to_bits());
        }
    }

    #[test]
    fn fused_close_to_f64_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let n = rng.random_range(2usize..=96);
            let x: Vec<f32> = (0..n).map(|_| rng.random_range(-3.0f32..3.0)).collect();
            let params = NormParams::unit(n);
            let (q, scale) = rmsnorm_quant_fused(&x, &params).unwrap();

            // Unfused fp64 reference: rmsnorm then absmax quantization.
            let sumsq: f64 = x.iter().map(|&v| (v as f64) * (v as f64)).sum();
            let rms = (sumsq / n as f64 + RMS_EPSILON as f64).sqrt();
            let normed: Vec<f64> = x.iter().map(|&v| v as f64 / rms).collect();
            let amax = normed.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let bound = amax / 127.0 * 0.5 + 1e-6;
            for (qi, ni) in q.iter().zip(&normed) {
                assert!(
                    ((*qi as f64) * scale as f64 - ni).abs() <= bound + amax * 1e-5,
                    "dequantized {} vs reference {ni}",
                    *qi as f64 * scale as f64
                );
            }
        }
    }

    #[test]
    fn absmax_known_example() {
        // 1 * 127/2 = 63.5 rounds half-even to 64.
        let (q, scale) = absmax_quantize(&[-2.0, 1.0]).unwrap();
        assert_eq!(q, vec![-127, 64]);
        assert!(close(scale, 2.0 / 127.0, 1e-9));
    }

    #[test]
    fn absmax_rejects_non_finite() {
        assert!(absmax_quantize(&[1.0, f32::NAN]).is_err());
        assert!(absmax_quantize(&[f32::INFINITY]).is_err());
    }

    #[test]
    fn silu_fixed_points() {
        assert_eq!(silu(0.0), 0.0);
        assert!(close(silu(50.0), 50.0, 1e-6));
        // f64 cross-check at many points.
        for i in 0..10_000 {
            let x = (i as f32 - 5000.0) * 0.003;
            let expect = (x as f64) / (1.0 + (-(x as f64)).exp());
            let tol = 1e-6 * expect.abs().max(1.0);
            assert!((silu(x) as f64 - expect).abs() <= tol, "x={x}");
        }
    }

    #[test]
    fn silu_odd_part_identity() {
        // sigmoid(x) + sigmoid(-x) = 1, so silu(x) - silu(-x) = x.
        for i in -100..=100 {
            let x = i as f32 * 0.17;
            assert!(close(silu(x) - silu(-x), x, 1e-5 * x.abs().max(1.0)));
        }
    }

    #[test]
    fn rope_identity_at_position_zero() {
        let params = RopeParams::new(8, ROPE_THETA, 16).unwrap();
        let orig: Vec<f32> = (0..8).map(|i| i as f32 - 3.5).collect();
        let mut x = orig.clone();
        rope_apply(&mut x, &[0], &params).unwrap();
        assert_eq!(x, orig);
    }

    #[test]
    fn rope_preserves_pair_norms() {
        let params = RopeParams::new(6, ROPE_THETA, 64).unwrap();
        let orig = vec![1.0f32, 2.0, -0.5, 3.0, 0.25, -1.0];
        let mut x = orig.clone();
        rope_apply(&mut x, &[37], &params).unwrap();
        for t in 0..3 {
            let before = orig[2 * t].hypot(orig[2 * t + 1]);
            let after = x[2 * t].hypot(x[2 * t + 1]);
            assert!(close(before, after, 1e-5));
        }
    }

    #[test]
    fn rope_relative_position_property() {
        // <rope(q, m), rope(k, n)> depends only on m - n.
        let d = 8;
        let params = RopeParams::new(d, ROPE_THETA, 128).unwrap();
        let q: Vec<f32> = (0..d).map(|i| (i as f32 * 0.7).sin()).collect();
        let k: Vec<f32> = (0..d).map(|i| (i as f32 * 0.3).cos()).collect();
        let dot_at = |m: usize, n: usize| -> f32 {
            let mut qr = q.clone();
            let mut kr = k.clone();
            rope_apply(&mut qr, &[m], &params).unwrap();
            rope_apply(&mut kr, &[n], &params).unwrap();
            qr.iter().zip(&kr).map(|(a, b)| a * b).sum()
        };
        assert!(close(dot_at(9, 4), dot_at(30, 25), 1e-5));
        assert!(close(dot_at(7, 7), dot_at(100, 100), 1e-5));
    }

    #[test]
    fn rope_rejects_odd_dim_and_overflow() {
        assert!(RopeParams::new(7, ROPE_THETA, 8).is_err());
        let params = RopeParams::new(4, ROPE_THETA, 4).unwrap();
        let mut x = vec![0.0f32; 4];
        assert!(rope_apply(&mut x, &[4], &params).is_err());
    }

    proptest! {
        #[test]
        fn quantization_roundtrip_bound(xs in proptest::collection::vec(-100.0f32..100.0, 1..64)) {
            let (q, scale) = absmax_quantize(&xs).unwrap();
            for (orig, quant) in xs.iter().zip(&q) {
                let back = *quant as f32 * scale;
                prop_assert!((back - orig).abs() <= scale / 2.0 + 1e-6);
            }
        }

        #[test]
        fn silu_monotone_nonnegative(a in 0.0f32..30.0, b in 0.0f32..30.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(silu(lo) <= silu(hi) + 1e-6);
        }
    }
}
