//! Straight-line fp64 reference implementation: the end-to-end oracle.
//!
//! Everything the engine does with fusion, lookup tables, online softmax,
//! and a KV cache, this module does the slow flat way in f64: dense trit
//! matmuls, separate norm and quantization passes, materialized causal
//! softmax, and full recomputation of the sequence for every generated
//! token. Quantization still snaps to the int8 grid (that is part of the
//! algorithm, not an implementation detail), but every decision is made in
//! f64.

use crate::error::{Error, Result};
use crate::fused::ROPE_THETA;
use crate::model::{Model, ModelConfig};
use crate::ternary::unpack_matrix;

struct RefMatrix {
    cols: usize,
    trits: Vec<i8>,
    scale: f64,
}

impl RefMatrix {
    fn from_packed(p: &crate::ternary::PackedTernaryMatrix) -> Result<Self> {
        let m = unpack_matrix(p, p.source_rows())?;
        Ok(Self {
            cols: m.cols(),
            trits: m.values().to_vec(),
            scale: p.scale() as f64,
        })
    }

    /// `out[k] = sum_n q[n] * w[n][k] * (q_scale * w_scale)`, trit select-add.
    fn project(&self, q: &[i8], q_scale: f64) -> Vec<f64> {
        let mut acc = vec![0i64; self.cols];
        for (n, &qv) in q.iter().enumerate() {
            if qv == 0 {
                continue;
            }
            let row = &self.trits[n * self.cols..(n + 1) * self.cols];
            for (k, &t) in row.iter().enumerate() {
                acc[k] += t as i64 * qv as i64;
            }
        }
        let s = q_scale * self.scale;
        acc.iter().map(|&a| a as f64 * s).collect()
    }
}

struct RefLayer {
    wq: RefMatrix,
    wk: RefMatrix,
    wv: RefMatrix,
    wo: RefMatrix,
    w_gate: RefMatrix,
    w_up: RefMatrix,
    w_down: RefMatrix,
    attn_gamma: Vec<f64>,
    ffn_gamma: Vec<f64>,
}

pub struct ReferenceModel {
    config: ModelConfig,
    embedding: Vec<f64>,
    layers: Vec<RefLayer>,
    final_gamma: Vec<f64>,
    lm_head: RefMatrix,
    epsilon: f64,
}

/// Greedy reference generation plus the argmax margins of every emitted
/// token (small margins flag seeds that are too close to call numerically).
pub struct RefGeneration {
    pub ids: Vec<u32>,
    pub margins: Vec<f64>,
}

fn rmsnorm_f64(x: &[f64], gamma: &[f64], epsilon: f64) -> Vec<f64> {
    let sumsq: f64 = x.iter().map(|&v| v * v).sum();
    let rms = (sumsq / x.len() as f64 + epsilon).sqrt();
    x.iter().zip(gamma).map(|(&v, &g)| v * g / rms).collect()
}

/// Symmetric int8 absmax quantization decided in f64.
fn quantize_f64(x: &[f64]) -> (Vec<i8>, f64) {
    let amax = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if amax == 0.0 {
        return (vec![0; x.len()], 1.0);
    }
    let q = x
        .iter()
        .map(|&v| (v * 127.0 / amax).round_ties_even().clamp(-127.0, 127.0) as i8)
        .collect();
    (q, amax / 127.0)
}

fn silu_f64(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

impl ReferenceModel {
    pub fn from_model(model: &Model) -> Result<Self> {
        let to_f64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        let mut layers = Vec::with_capacity(model.layers.len());
        for l in &model.layers {
            layers.push(RefLayer {
                wq: RefMatrix::from_packed(&l.wq)?,
                wk: RefMatrix::from_packed(&l.wk)?,
                wv: RefMatrix::from_packed(&l.wv)?,
                wo: RefMatrix::from_packed(&l.wo)?,
                w_gate: RefMatrix::from_packed(&l.w_gate)?,
                w_up: RefMatrix::from_packed(&l.w_up)?,
                w_down: RefMatrix::from_packed(&l.w_down)?,
                attn_gamma: to_f64(&l.attn_norm.gamma),
                ffn_gamma: to_f64(&l.ffn_norm.gamma),
            });
        }
        Ok(Self {
            config: model.config.clone(),
            embedding: to_f64(&model.embedding),
            layers,
            final_gamma: to_f64(&model.final_norm.gamma),
            lm_head: RefMatrix::from_packed(&model.lm_head)?,
            epsilon: crate::fused::RMS_EPSILON as f64,
        })
    }

    fn rope_row(&self, row: &mut [f64], pos: usize) {
        let d = self.config.head_dim;
        for t in 0..d / 2 {
            let freq = (ROPE_THETA as f64).powf(-2.0 * t as f64 / d as f64);
            let angle = pos as f64 * freq;
            let (sin, cos) = angle.sin_cos();
            let a = row[2 * t];
            let b = row[2 * t + 1];
            row[2 * t] = a * cos - b * sin;
            row[2 * t + 1] = a * sin + b * cos;
        }
    }

    /// Final hidden states `[tokens x hidden]` for a whole sequence, with
    /// materialized causal attention and no cache.
    pub fn hidden_states(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let c = &self.config;
        let (n, h, d) = (c.hidden_size, c.heads, c.head_dim);
        if tokens.is_empty() {
            return Err(Error::shape("empty sequence"));
        }
        let count = tokens.len();
        let mut x = vec![0.0f64; count * n];
        for (i, &tok) in tokens.iter().enumerate() {
            let id = tok as usize;
            if id >= c.vocab_size {
                return Err(Error::config(format!("token id {tok} outside vocabulary")));
            }
            x[i * n..(i + 1) * n].copy_from_slice(&self.embedding[id * n..(id + 1) * n]);
        }

        for layer in &self.layers {
            // Projections from per-row normalized + quantized activations.
            let mut q_all = vec![0.0f64; count * n];
            let mut k_all = vec![0.0f64; count * n];
            let mut v_all = vec![0.0f64; count * n];
            for i in 0..count {
                let normed = rmsnorm_f64(&x[i * n..(i + 1) * n], &layer.attn_gamma, self.epsilon);
                let (q8, s) = quantize_f64(&normed);
                q_all[i * n..(i + 1) * n].copy_from_slice(&layer.wq.project(&q8, s));
                k_all[i * n..(i + 1) * n].copy_from_slice(&layer.wk.project(&q8, s));
                v_all[i * n..(i + 1) * n].copy_from_slice(&layer.wv.project(&q8, s));
            }
            // Rotary on q and k, per head, position = token index.
            for i in 0..count {
                for head in 0..h {
                    let span = i * n + head * d..i * n + (head + 1) * d;
                    self.rope_row(&mut q_all[span.clone()], i);
                    self.rope_row(&mut k_all[span], i);
                }
            }
            // Per-token int8 snap, one scale across the token's heads.
            let mut q_i8 = vec![0i8; count * n];
            let mut k_i8 = vec![0i8; count * n];
            let mut v_i8 = vec![0i8; count * n];
            let mut q_s = vec![0.0f64; count];
            let mut k_s = vec![0.0f64; count];
            let mut v_s = vec![0.0f64; count];
            for i in 0..count {
                let (q8, qs) = quantize_f64(&q_all[i * n..(i + 1) * n]);
                let (k8, ks) = quantize_f64(&k_all[i * n..(i + 1) * n]);
                let (v8, vs) = quantize_f64(&v_all[i * n..(i + 1) * n]);
                q_i8[i * n..(i + 1) * n].copy_from_slice(&q8);
                k_i8[i * n..(i + 1) * n].copy_from_slice(&k8);
                v_i8[i * n..(i + 1) * n].copy_from_slice(&v8);
                q_s[i] = qs;
                k_s[i] = ks;
                v_s[i] = vs;
            }

            // Materialized causal attention per head.
            let inv_sqrt_d = 1.0 / (d as f64).sqrt();
            let mut attn = vec![0.0f64; count * n];
            for head in 0..h {
                for i in 0..count {
                    let qi = &q_i8[i * n + head * d..i * n + (head + 1) * d];
                    let mut scores = Vec::with_capacity(i + 1);
                    for j in 0..=i {
                        let kj = &k_i8[j * n + head * d..j * n + (head + 1) * d];
                        let dot: i64 = qi
                            .iter()
                            .zip(kj)
                            .map(|(&a, &b)| a as i64 * b as i64)
                            .sum();
                        scores.push(dot as f64 * q_s[i] * k_s[j] * inv_sqrt_d);
                    }
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
                    let denom: f64 = weights.iter().sum();
                    for (j, w) in weights.iter().enumerate() {
                        let vj = &v_i8[j * n + head * d..j * n + (head + 1) * d];
                        for t in 0..d {
                            attn[i * n + head * d + t] += w / denom * (vj[t] as f64 * v_s[j]);
                        }
                    }
                }
            }

            // Output projection, residual, FFN, residual.
            for i in 0..count {
                let (a8, a_s) = quantize_f64(&attn[i * n..(i + 1) * n]);
                let proj = layer.wo.project(&a8, a_s);
                for t in 0..n {
                    x[i * n + t] += proj[t];
                }
                let normed = rmsnorm_f64(&x[i * n..(i + 1) * n], &layer.ffn_gamma, self.epsilon);
                let (f8, f_s) = quantize_f64(&normed);
                let gate = layer.w_gate.project(&f8, f_s);
                let up = layer.w_up.project(&f8, f_s);
                let inter: Vec<f64> = gate
                    .iter()
                    .zip(&up)
                    .map(|(&g, &u)| silu_f64(g) * u)
                    .collect();
                let (i8v, i_s) = quantize_f64(&inter);
                let down = layer.w_down.project(&i8v, i_s);
                for t in 0..n {
                    x[i * n + t] += down[t];
                }
            }
        }
        Ok(x)
    }

    /// Logits for the last position of a sequence.
    pub fn last_logits(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let n = self.config.hidden_size;
        let hidden = self.hidden_states(tokens)?;
        let last = &hidden[(tokens.len() - 1) * n..];
        let normed = rmsnorm_f64(last, &self.final_gamma, self.epsilon);
        let (q8, s) = quantize_f64(&normed);
        Ok(self.lm_head.project(&q8, s))
    }

    /// Greedy generation by full recomputation each step, with the same
    /// capacity accounting as the engine: prompt + generated <= capacity.
    pub fn generate(&self, prompt: &[u32], max_new_tokens: usize) -> Result<RefGeneration> {
        let capacity = self.config.capacity;
        if prompt.is_empty() {
            return Err(Error::shape("empty prompt"));
        }
        if prompt.len() > capacity {
            return Err(Error::ContextOverflow { capacity });
        }
        let mut sequence = prompt.to_vec();
        let mut ids = Vec::new();
        let mut margins = Vec::new();
        while ids.len() < max_new_tokens && sequence.len() < capacity {
            let logits = self.last_logits(&sequence)?;
            let mut best = 0usize;
            for (i, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = i;
                }
            }
            let mut second = f64::NEG_INFINITY;
            for (i, &v) in logits.iter().enumerate() {
                if i != best {
                    second = second.max(v);
                }
            }
            ids.push(best as u32);
            margins.push(logits[best] - second);
            sequence.push(best as u32);
        }
        Ok(RefGeneration { ids, margins })
    }
}
