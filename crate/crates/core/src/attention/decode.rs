//! Decode-phase attention over a KV cache, decoupled into three
//! matrix-vector steps, plus the LM-head projection that reuses the same
//! engine.
//!
//! A decode step computes scores `q x K_cache^T`, a softmax over the 1 x M
//! score vector (small enough to buffer whole), and the value aggregation
//! `p x V_cache`. The LM head is the same shape of work — one vector against
//! a large matrix — so [`lm_head`] routes through [`quant_matvec`] exactly
//! like [`decode_scores`] does; an instrumentation counter lets tests pin
//! that the code path really is shared.

use crate::attention::scaled_score;
use crate::error::{Error, Result};
use crate::instrument;
use crate::ternary::{pow3, PackedTernaryMatrix};

/// Append-only int8 key/value history for one layer.
///
/// Layout is `[head][slot][head_dim]` with `capacity` slots preallocated per
/// head; `len` tracks the filled prefix. Each appended token carries its own
/// k and v dequantization scale, so an entry's bytes and meaning never
/// change after the append.
#[derive(Debug, Clone)]
pub struct KvCache {
    heads: usize,
    head_dim: usize,
    capacity: usize,
    len: usize,
    k: Vec<i8>,
    v: Vec<i8>,
    k_scales: Vec<f32>,
    v_scales: Vec<f32>,
}

impl KvCache {
    pub const DEFAULT_CAPACITY: usize = 1024;

    pub fn new(heads: usize, head_dim: usize, capacity: usize) -> Result<Self> {
        if heads == 0 || head_dim == 0 || capacity == 0 {
            return Err(Error::config(format!(
                "kv cache dims must be >= 1: heads={heads} head_dim={head_dim} capacity={capacity}"
            )));
        }
        Ok(Self {
            heads,
            head_dim,
            capacity,
            len: 0,
            k: vec![0; heads * capacity * head_dim],
            v: vec![0; heads * capacity * head_dim],
            k_scales: Vec::with_capacity(capacity),
            v_scales: Vec::with_capacity(capacity),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn k_scales(&self) -> &[f32] {
        &self.k_scales
    }

    pub fn v_scales(&self) -> &[f32] {
        &self.v_scales
    }

    /// Append one token's `[heads x head_dim]` keys and values. Prior
    /// entries are never touched.
    pub fn append_kv(
        &mut self,
        k_new: &[i8],
        v_new: &[i8],
        k_scale: f32,
        v_scale: f32,
    ) -> Result<()> {
        if self.len >= self.capacity {
            return Err(Error::ContextOverflow {
                capacity: self.capacity,
            });
        }
        let want = self.heads * self.head_dim;
        if k_new.len() != want || v_new.len() != want {
            return Err(Error::shape(format!(
                "kv append needs {want} values per tensor, got k={} v={}",
                k_new.len(),
                v_new.len()
            )));
        }
        if !(k_scale.is_finite() && k_scale > 0.0 && v_scale.is_finite() && v_scale > 0.0) {
            return Err(Error::Numeric(format!(
                "kv scales must be finite and positive: k={k_scale} v={v_scale}"
            )));
        }
        let d = self.head_dim;
        for head in 0..self.heads {
            let dst = (head * self.capacity + self.len) * d;
            self.k[dst..dst + d].copy_from_slice(&k_new[head * d..(head + 1) * d]);
            self.v[dst..dst + d].copy_from_slice(&v_new[head * d..(head + 1) * d]);
        }
        self.k_scales.push(k_scale);
        self.v_scales.push(v_scale);
        self.len += 1;
        Ok(())
    }

    /// The filled key rows of one head: `len * head_dim` values.
    pub fn k_head(&self, head: usize) -> &[i8] {
        let start = head * self.capacity * self.head_dim;
        &self.k[start..start + self.len * self.head_dim]
    }

    pub fn v_head(&self, head: usize) -> &[i8] {
        let start = head * self.capacity * self.head_dim;
        &self.v[start..start + self.len * self.head_dim]
    }
}

/// Row source for the shared quantized matrix-vector engine.
pub enum MatvecRows<'a> {
    /// Contiguous int8 rows, `rows * dim` values (a KV-cache head view).
    Int8 { data: &'a [i8], dim: usize },
    /// Columns of a packed ternary matrix, decoded group by group. Row `r`
    /// of the product is output column `r` of the matrix.
    TernaryCols(&'a PackedTernaryMatrix),
}

/// The one quantized matrix-vector routine behind both decode attention
/// scores and the LM head. Integer accumulation, exact.
pub fn quant_matvec(x: &[i8], rows: &MatvecRows) -> Result<Vec<i32>> {
    instrument::count_shared_matvec();
    match rows {
        MatvecRows::Int8 { data, dim } => {
            if *dim == 0 || data.len() % dim != 0 {
                return Err(Error::shape(format!(
                    "int8 row buffer of {} values is not a multiple of dim {dim}",
                    data.len()
                )));
            }
            if x.len() != *dim {
                return Err(Error::shape(format!(
                    "vector length {} != row dim {dim}",
                    x.len()
                )));
            }
            Ok(data
                .chunks_exact(*dim)
                .map(|row| super::dot_i8(x, row))
                .collect())
        }
        MatvecRows::TernaryCols(w) => {
            if x.len() != w.source_rows() {
                return Err(Error::shape(format!(
                    "vector length {} != weight rows {}",
                    x.len(),
                    w.source_rows()
                )));
            }
            let g = w.group_size();
            let block = w.tables() * g;
            // Trit lookup for every index value, decoded once.
            let span = pow3(g) as usize;
            let mut trits = vec![0i8; span * g];
            for idx in 0..span {
                let mut v = idx;
                for t in 0..g {
                    trits[idx * g + t] = (v % 3) as i8 - 1;
                    v /= 3;
                }
            }
            let mut out = vec![0i32; w.cols()];
            for (col, acc) in out.iter_mut().enumerate() {
                let mut sum = 0i32;
                for s in 0..w.super_rows() {
                    let base = s * block;
                    if base >= x.len() {
                        break;
                    }
                    for (t, &idx) in w.idx_vec(s, col).iter().enumerate() {
                        let row0 = base + t * g;
                        let lut = &trits[idx as usize * g..idx as usize * g + g];
                        for (i, &trit) in lut.iter().enumerate() {
                            let r = row0 + i;
                            if r >= x.len() {
                                break;
                            }
                            sum += trit as i32 * x[r] as i32;
                        }
                    }
                }
                *acc = sum;
            }
            Ok(out)
        }
    }
}

/// Per-head attention scores of the new token against the whole cache:
/// `score[h][j] = (q_h . k_hj) * q_scale * k_scale_j * softmax_scale`.
pub fn decode_scores(
    q: &[i8],
    q_scale: f32,
    cache: &KvCache,
    softmax_scale: f32,
) -> Result<Vec<Vec<f32>>> {
    if cache.is_empty() {
        return Err(Error::shape("decode over an empty kv cache"));
    }
    let d = cache.head_dim;
    if q.len() != cache.heads * d {
        return Err(Error::shape(format!(
            "query length {} != heads*head_dim {}",
            q.len(),
            cache.heads * d
        )));
    }
    let mut scores = Vec::with_capacity(cache.heads);
    for head in 0..cache.heads {
        let rows = MatvecRows::Int8 {
            data: cache.k_head(head),
            dim: d,
        };
        instrument::count_cache_bytes((cache.len * d) as u64);
        let dots = quant_matvec(&q[head * d..(head + 1) * d], &rows)?;
        scores.push(
            dots.iter()
                .zip(&cache.k_scales)
                .map(|(&dot, &ks)| scaled_score(dot, q_scale, ks, softmax_scale))
                .collect(),
        );
    }
    Ok(scores)
}

/// Max-subtracted softmax of a buffered score vector, computed in f64.
pub fn softmax_vector(scores: &[f32]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::shape("softmax of an empty vector"));
    }
    let mut m = f64::NEG_INFINITY;
    for &s in scores {
        if !s.is_finite() {
            return Err(Error::Numeric(format!("softmax over non-finite score {s}")));
        }
        m = m.max(s as f64);
    }
    let mut out = Vec::with_capacity(scores.len());
    let mut denom = 0.0f64;
    for &s in scores {
        let e = (s as f64 - m).exp();
        out.push(e);
        denom += e;
    }
    for p in &mut out {
        *p /= denom;
    }
    Ok(out)
}

/// Probability-weighted sweep over the value cache, dequantized per token.
/// Returns the `[heads * head_dim]` attention output.
pub fn decode_aggregate(probs: &[Vec<f64>], cache: &KvCache) -> Result<Vec<f32>> {
    if probs.len() != cache.heads {
        return Err(Error::shape(format!(
            "{} probability rows != {} heads",
            probs.len(),
            cache.heads
        )));
    }
    let d = cache.head_dim;
    let m = cache.len;
    let mut out = vec![0.0f32; cache.heads * d];
    for (head, p_row) in probs.iter().enumerate() {
        if p_row.len() != m {
            return Err(Error::shape(format!(
                "probability length {} != cached tokens {m}",
                p_row.len()
            )));
        }
        instrument::count_cache_bytes((m * d) as u64);
        let v = cache.v_head(head);
        let mut acc = vec![0.0f64; d];
        for (j, &p) in p_row.iter().enumerate() {
            let vs = cache.v_scales[j] as f64;
            for t in 0..d {
                acc[t] += p * (v[j * d + t] as f64 * vs);
            }
        }
        for t in 0..d {
            out[head * d + t] = acc[t] as f32;
        }
    }
    Ok(out)
}

/// The full decoupled decode step: scores, softmax, aggregation.
pub fn decode_attention(
    q: &[i8],
    q_scale: f32,
    cache: &KvCache,
    softmax_scale: f32,
) -> Result<Vec<f32>> {
    let scores = decode_scores(q, q_scale, cache, softmax_scale)?;
    let probs = scores
        .iter()
        .map(|s| softmax_vector(s))
        .collect::<Result<Vec<_>>>()?;
    decode_aggregate(&probs, cache)
}

/// Vocabulary scores from the final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(pub Vec<f32>);

impl LogitVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Greedy pick; ties go to the lower id.
    pub fn argmax(&self) -> usize {
        let mut best = 0usize;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Gap between the best and second-best logit.
    pub fn top2_margin(&self) -> f32 {
        let best = self.argmax();
        let mut second = f32::NEG_INFINITY;
        for (i, &v) in self.0.iter().enumerate() {
            if i != best {
                second = second.max(v);
            }
        }
        self.0[best] - second
    }
}

/// LM-head projection `[1,N] x [N,V] -> [1,V]` on the decode engine.
///
/// The hidden vector is absmax-quantized, pushed through the same
/// [`quant_matvec`] routine decode scores use (with the ternary weight
/// columns as rows), and dequantized by both scales.
pub fn lm_head(hidden: &[f32], head_weights: &PackedTernaryMatrix) -> Result<LogitVector> {
    if hidden.len() != head_weights.source_rows() {
        return Err(Error::shape(format!(
            "hidden length {} != lm head rows {}",
            hidden.len(),
            head_weights.source_rows()
        )));
    }
    let (q, scale) = crate::fused::absmax_quantize(hidden)?;
    let acc = quant_matvec(&q, &MatvecRows::TernaryCols(head_weights))?;
    let w_scale = head_weights.scale();
    let logits = acc
        .iter()
        .map(|&a| a as f32 * scale * w_scale)
        .collect::<Vec<_>>();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(LogitVector(logits))
}
