//! Prefill attention: the online-softmax recurrence and three schedules.
//!
//! The fused kernel never materializes a score matrix. Each resident query
//! slot carries a running max `m`, denominator `l`, and output accumulator
//! `o`; folding one more score/value pair rescales the old state by
//! `exp(m_old - m_new)` and adds the new term. This is the block-size-1
//! special case of flash-style attention, and it is exact: the finalized
//! `o / l` equals the full softmax-weighted value average.
//!
//! Schedules differ only in traversal order and data movement:
//! - reverse: query batches from the top of the sequence down, keys streamed
//!   from token 0 up to the batch's highest query, masked work skipped, and
//!   the top `p` kv tokens evicted for good after each batch;
//! - dense: ascending query batches with the full key stream and no mask
//!   skipping (the cost baseline with q reuse);
//! - naive: the oracle — materialize scores, mask, softmax, aggregate.

use crate::attention::{dot_i8, scaled_score};
use crate::error::{Error, Result};
use crate::instrument;
use crate::trace::LoadTrace;

/// Running online-softmax state for one (head, query-slot) pair.
#[derive(Debug, Clone)]
pub struct FusionState {
    max_score: f64,
    denom: f64,
    acc: Vec<f64>,
    steps: usize,
}

impl FusionState {
    pub fn new(head_dim: usize) -> Self {
        Self {
            max_score: 0.0,
            denom: 0.0,
            acc: vec![0.0; head_dim],
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn running_max(&self) -> f64 {
        self.max_score
    }

    pub fn denom(&self) -> f64 {
        self.denom
    }

    /// Fold one score/value pair. The first fold initializes the state to
    /// the degenerate first block (m = s, l = 1, o = v); later folds apply
    /// the rescale-and-add recurrence.
    pub fn online_step(&mut self, score: f64, value: &[f64]) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Numeric(format!(
                "online softmax fold over non-finite score {score}"
            )));
        }
        if value.len() != self.acc.len() {
            return Err(Error::shape(format!(
                "value dim {} != state dim {}",
                value.len(),
                self.acc.len()
            )));
        }
        if self.steps == 0 {
            self.max_score = score;
            self.denom = 1.0;
            self.acc.copy_from_slice(value);
        } else {
            let new_max = self.max_score.max(score);
            let keep = (self.max_score - new_max).exp();
            let add = (score - new_max).exp();
            self.denom = self.denom * keep + add;
            for (o, &v) in self.acc.iter_mut().zip(value) {
                *o = *o * keep + add * v;
            }
            self.max_score = new_max;
        }
        self.steps += 1;
        Ok(())
    }

    /// Normalize the accumulator: the softmax-weighted value average.
    pub fn finalize(&self) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(Error::EmptyStream);
        }
        Ok(self.acc.iter().map(|&o| o / self.denom).collect())
    }
}

/// A prefill attention problem: per-head int8 q/k/v token matrices with
/// per-token dequantization scales, plus the schedule parallelism `p`.
#[derive(Debug, Clone)]
pub struct PrefillBatch {
    q: Vec<i8>,
    k: Vec<i8>,
    v: Vec<i8>,
    q_scales: Vec<f32>,
    k_scales: Vec<f32>,
    v_scales: Vec<f32>,
    tokens: usize,
    heads: usize,
    head_dim: usize,
    parallelism: usize,
    softmax_scale: f32,
}

impl PrefillBatch {
    /// `q`, `k`, `v` are `[heads][tokens][head_dim]` row-major, each tensor
    /// carrying one scale (the per-tensor form).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        q: Vec<i8>,
        k: Vec<i8>,
        v: Vec<i8>,
        tokens: usize,
        heads: usize,
        head_dim: usize,
        scales: (f32, f32, f32),
        parallelism: usize,
        softmax_scale: f32,
    ) -> Result<Self> {
        let (qs, ks, vs) = scales;
        Self::with_token_scales(
            q,
            k,
            v,
            vec![qs; tokens],
            vec![ks; tokens],
            vec![vs; tokens],
            tokens,
            heads,
            head_dim,
            parallelism,
            softmax_scale,
        )
    }

    /// Same, with one scale per token (the per-tensor case is a constant
    /// vector). The runtime uses this form so a token quantizes identically
    /// whether it arrives during prefill or decode.
    #[allow(clippy::too_many_arguments)]
    pub fn with_token_scales(
        q: Vec<i8>,
        k: Vec<i8>,
        v: Vec<i8>,
        q_scales: Vec<f32>,
        k_scales: Vec<f32>,
        v_scales: Vec<f32>,
        tokens: usize,
        heads: usize,
        head_dim: usize,
        parallelism: usize,
        softmax_scale: f32,
    ) -> Result<Self> {
        if tokens == 0 {
            return Err(Error::shape("zero-length prompt"));
        }
        if heads == 0 || head_dim == 0 || parallelism == 0 {
            return Err(Error::config(format!(
                "heads={heads} head_dim={head_dim} parallelism={parallelism} must all be >= 1"
            )));
        }
        let want = heads * tokens * head_dim;
        for (name, t) in [("q", &q), ("k", &k), ("v", &v)] {
            if t.len() != want {
                return Err(Error::shape(format!(
                    "{name} tensor has {} values, expected {want}",
                    t.len()
                )));
            }
        }
        for (name, s) in [("q", &q_scales), ("k", &k_scales), ("v", &v_scales)] {
            if s.len() != tokens {
                return Err(Error::shape(format!(
                    "{name} scales length {} != tokens {tokens}",
                    s.len()
                )));
            }
            if s.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Numeric(format!("{name} scales must be finite and positive")));
            }
        }
        if !softmax_scale.is_finite() {
            return Err(Error::Numeric("softmax scale must be finite".into()));
        }
        Ok(Self {
            q,
            k,
            v,
            q_scales,
            k_scales,
            v_scales,
            tokens,
            heads,
            head_dim,
            parallelism,
            softmax_scale,
        })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    #[inline]
    fn row(&self, head: usize, token: usize) -> std::ops::Range<usize> {
        let start = (head * self.tokens + token) * self.head_dim;
        start..start + self.head_dim
    }

    #[inline]
    fn q_row(&self, head: usize, token: usize) -> &[i8] {
        &self.q[self.row(head, token)]
    }

    #[inline]
    fn k_row(&self, head: usize, token: usize) -> &[i8] {
        &self.k[self.row(head, token)]
    }

    #[inline]
    fn v_row(&self, head: usize, token: usize) -> &[i8] {
        &self.v[self.row(head, token)]
    }

    #[inline]
    fn score(&self, head: usize, qi: usize, kj: usize) -> f32 {
        scaled_score(
            dot_i8(self.q_row(head, qi), self.k_row(head, kj)),
            self.q_scales[qi],
            self.k_scales[kj],
            self.softmax_scale,
        )
    }

    fn dequant_v_into(&self, head: usize, token: usize, out: &mut [f64]) {
        let s = self.v_scales[token] as f64;
        for (o, &x) in out.iter_mut().zip(self.v_row(head, token)) {
            *o = x as f64 * s;
        }
    }
}

/// Oracle: materialized causal attention with a full softmax per row.
///
/// Output is `[tokens][heads * head_dim]` with heads concatenated per token.
pub fn naive_causal_attention(batch: &PrefillBatch) -> Result<Vec<f32>> {
    let n = batch.tokens;
    let (h, d) = (batch.heads, batch.head_dim);
    let mut out = vec![0.0f32; n * h * d];
    let mut v_row = vec![0.0f64; d];
    for head in 0..h {
        for i in 0..n {
            // Causal row: scores for j <= i only; j > i is masked to -inf,
            // which contributes nothing, so it never enters the sum.
            let scores: Vec<f32> = (0..=i).map(|j| batch.score(head, i, j)).collect();
            let m = scores.iter().fold(f64::NEG_INFINITY, |a, &s| a.max(s as f64));
            let mut denom = 0.0f64;
            let mut weights = vec![0.0f64; i + 1];
            for (j, &s) in scores.iter().enumerate() {
                let e = ((s as f64) - m).exp();
                weights[j] = e;
                denom += e;
            }
            let base = i * h * d + head * d;
            let mut acc = vec![0.0f64; d];
            for (j, w) in weights.iter().enumerate() {
                batch.dequant_v_into(head, j, &mut v_row);
                for t in 0..d {
                    acc[t] += w / denom * v_row[t];
                }
            }
            for t in 0..d {
                out[base + t] = acc[t] as f32;
            }
        }
    }
    Ok(out)
}

/// The reverse-reordered fused schedule.
///
/// Queries are taken in batches of `p` from the highest token indices
/// downward; each batch streams keys/values from token 0 up to the batch's
/// maximum query index and folds them online, skipping masked (j > i) work
/// entirely. When a batch finishes, its top `p` kv tokens are dead — no
/// later batch can attend to them — so they are evicted and never reloaded.
/// Live state is bounded by the batch: `p` query tokens, one k and one v
/// token, and `h * p` fold states.
pub fn reverse_prefill_attention(batch: &PrefillBatch) -> Result<(Vec<f32>, LoadTrace)> {
    let n = batch.tokens;
    let (h, d) = (batch.heads, batch.head_dim);
    let p = batch.parallelism;
    let mut out = vec![0.0f32; n * h * d];
    let mut trace = LoadTrace::new();

    let mut hi = n;
    let mut q_slab: Vec<i8> = Vec::new();
    let mut v_scratch = vec![0.0f64; d];
    while hi > 0 {
        let lo = hi.saturating_sub(p);
        let slots = hi - lo;

        // Fill resident query slots from the highest index downward.
        q_slab.clear();
        q_slab.reserve(slots * h * d);
        for slot in 0..slots {
            trace.record_q(hi - 1 - slot);
        }
        for head in 0..h {
            for token in lo..hi {
                q_slab.extend_from_slice(batch.q_row(head, token));
            }
        }

        let mut states: Vec<FusionState> = (0..h * slots).map(|_| FusionState::new(d)).collect();
        instrument::record_resident_bytes(
            (q_slab.len() + 2 * h * d) as u64 + (h * slots) as u64 * (8 * d as u64 + 16),
        );

        // Stream kv tokens 0..hi once for the whole batch.
        for j in 0..hi {
            trace.record_kv(j);
            trace.iterations += 1;
            for head in 0..h {
                batch.dequant_v_into(head, j, &mut v_scratch);
                for (slot, token) in (lo..hi).enumerate() {
                    if j > token {
                        continue; // masked: skipped, not computed
                    }
                    let q_row = &q_slab[(head * slots + slot) * d..(head * slots + slot + 1) * d];
                    let s = scaled_score(
                        dot_i8(q_row, batch.k_row(head, j)),
                        batch.q_scales[token],
                        batch.k_scales[j],
                        batch.softmax_scale,
                    );
                    states[head * slots + slot].online_step(s as f64, &v_scratch)?;
                }
            }
        }

        for head in 0..h {
            for (slot, token) in (lo..hi).enumerate() {
                let o = states[head * slots + slot].finalize()?;
                let base = token * h * d + head * d;
                for t in 0..d {
                    out[base + t] = o[t] as f32;
                }
            }
        }

        // Evict this batch's top kv tokens; the next batch stops at `lo`.
        hi = lo;
    }
    Ok((out, trace))
}

/// The dense (q-reuse) schedule: ascending query batches, full key stream,
/// no mask skipping. Masked cells are computed and discarded; the trace
/// counts them and the `p - 1` pipeline-skew cycles of the diagonal
/// wavefront, during each of which one kv block streams.
pub fn dense_schedule_attention(batch: &PrefillBatch) -> Result<(Vec<f32>, LoadTrace)> {
    let n = batch.tokens;
    let (h, d) = (batch.heads, batch.head_dim);
    let p = batch.parallelism;
    let mut out = vec![0.0f32; n * h * d];
    let mut trace = LoadTrace::new();
    let mut v_scratch = vec![0.0f64; d];

    let mut lo = 0usize;
    while lo < n {
        let hi = (lo + p).min(n);
        for token in lo..hi {
            trace.record_q(token);
        }
        let slots = hi - lo;
        let mut states: Vec<FusionState> = (0..h * slots).map(|_| FusionState::new(d)).collect();
        for j in 0..n {
            trace.record_kv(j);
            trace.iterations += 1;
            for head in 0..h {
                batch.dequant_v_into(head, j, &mut v_scratch);
                for (slot, token) in (lo..hi).enumerate() {
                    let s = batch.score(head, token, j);
                    if j > token {
                        // Computed, then thrown away by the mask.
                        trace.masked_cells += 1;
                        continue;
                    }
                    states[head * slots + slot].online_step(s as f64, &v_scratch)?;
                }
            }
        }
        for head in 0..h {
            for (slot, token) in (lo..hi).enumerate() {
                let o = states[head * slots + slot].finalize()?;
                let base = token * h * d + head * d;
                for t in 0..d {
                    out[base + t] = o[t] as f32;
                }
            }
        }
        lo = hi;
    }

    // Diagonal wavefront fill/drain: p - 1 skew cycles, one kv block each.
    for extra in 0..p.saturating_sub(1) {
        trace.record_kv(extra.min(n - 1));
        trace.iterations += 1;
    }
    Ok((out, trace))
}
