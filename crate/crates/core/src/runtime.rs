//! End-to-end inference: embedding lookup, transformer blocks (fused
//! norm+quant, ternary projections, RoPE, phase-appropriate attention,
//! gated FFN), prefill, and the greedy decode loop.
//!
//! Quantization is per token row everywhere: a token's activations quantize
//! to the same int8 bytes whether the token arrives in a prefill batch or a
//! decode step, which is what makes the two phases numerically
//! interchangeable. KV entries enter the cache with the very bytes and
//! scales the prefill attention consumed.

use crate::attention::{decode_attention, lm_head, reverse_prefill_attention, KvCache, LogitVector, PrefillBatch};
use crate::error::{Error, Result};
use crate::fused::{absmax_quantize, rmsnorm, rmsnorm_quant_fused, rope_apply, RopeParams, ROPE_THETA};
use crate::instrument;
use crate::matmul::{dequantize_output_into, tl_matmul_streamed, Activation, QuantTensor};
use crate::model::{LayerWeights, Model, ModelConfig};
use crate::sched::Phase;
use crate::ternary::PackedTernaryMatrix;
use serde::Serialize;
use std::time::Instant;

/// Quantized linear layer: per-row int8 inputs with per-row scales against
/// one packed ternary matrix, dequantized (and optionally activated) inside
/// the accumulator sink. Allocates exactly one output tensor.
pub fn quant_linear(
    q_rows: &[i8],
    row_scales: &[f32],
    tokens: usize,
    w: &PackedTernaryMatrix,
    lookup_width: usize,
    act: Activation,
) -> Result<Vec<f32>> {
    if row_scales.len() != tokens {
        return Err(Error::shape(format!(
            "{} row scales for {tokens} rows",
            row_scales.len()
        )));
    }
    // The kernel ignores the tensor-level scale; dequantization applies the
    // true per-row scale below.
    let a = QuantTensor::new(tokens, w.source_rows(), q_rows.to_vec(), 1.0)?;
    let cols = w.cols();
    instrument::count_tensor_alloc();
    let mut out = vec![0.0f32; tokens * cols];
    tl_matmul_streamed(&a, w, lookup_width, |m, acc| {
        dequantize_output_into(acc, row_scales[m], w.scale(), act, &mut out[m * cols..(m + 1) * cols])
    })?;
    Ok(out)
}

/// Tracks scratch buffers for the working-set gauge; frees them on drop so
/// nothing counts as live across layers.
struct ScratchGauge(u64);

impl ScratchGauge {
    fn new() -> Self {
        ScratchGauge(0)
    }

    fn add(&mut self, bytes: usize) {
        self.0 += bytes as u64;
        instrument::activation_alloc(bytes as u64);
    }
}

impl Drop for ScratchGauge {
    fn drop(&mut self) {
        instrument::activation_free(self.0);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerationRequest {
    pub prompt: Vec<u32>,
    pub max_new_tokens: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GenerationResult {
    pub prompt_tokens: usize,
    pub generated: Vec<u32>,
    pub prefill_seconds: f64,
    /// One entry per decode step (the first token comes out of prefill).
    pub decode_seconds: Vec<f64>,
    pub kv_loads_per_layer: Vec<u64>,
    pub quant_saturations: u64,
}

impl GenerationResult {
    pub fn decode_tokens_per_second(&self) -> f64 {
        let total: f64 = self.decode_seconds.iter().sum();
        if total > 0.0 {
            self.decode_seconds.len() as f64 / total
        } else {
            0.0
        }
    }

    /// Identity of everything the engine must reproduce deterministically.
    pub fn fingerprint(&self) -> (Vec<u32>, Vec<u64>, u64) {
        (
            self.generated.clone(),
            self.kv_loads_per_layer.clone(),
            self.quant_saturations,
        )
    }
}

/// Hidden states and caches from running a whole prompt.
pub struct PromptRun {
    /// `[tokens x hidden]` final hidden states.
    pub hidden: Vec<f32>,
    pub caches: Vec<KvCache>,
    pub kv_loads_per_layer: Vec<u64>,
    pub quant_saturations: u64,
}

/// One decode step's hidden state.
pub struct StepRun {
    pub hidden: Vec<f32>,
    pub kv_loads_per_layer: Vec<u64>,
    pub quant_saturations: u64,
}

pub struct PrefillOutput {
    pub first_token: u32,
    pub logits: LogitVector,
    pub caches: Vec<KvCache>,
    pub seconds: f64,
    pub kv_loads_per_layer: Vec<u64>,
    pub quant_saturations: u64,
}

pub struct Engine {
    model: Model,
    rope: RopeParams,
}

impl Engine {
    pub fn new(model: Model) -> Result<Self> {
        model.config.validate()?;
        let c = &model.config;
        if model.embedding.len() != c.vocab_size * c.hidden_size {
            return Err(Error::shape(format!(
                "embedding has {} values, config wants {}",
                model.embedding.len(),
                c.vocab_size * c.hidden_size
            )));
        }
        if model.layers.len() != c.layers {
            return Err(Error::shape(format!(
                "{} layer weight sets for {} configured layers",
                model.layers.len(),
                c.layers
            )));
        }
        let rope = RopeParams::new(c.head_dim, ROPE_THETA, c.capacity)?;
        Ok(Self { model, rope })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn new_caches(&self) -> Result<Vec<KvCache>> {
        let c = &self.model.config;
        (0..c.layers)
            .map(|_| KvCache::new(c.heads, c.head_dim, c.capacity))
            .collect()
    }

    fn embed_into(&self, token: u32, out: &mut [f32]) -> Result<()> {
        let n = self.model.config.hidden_size;
        let v = self.model.config.vocab_size;
        let id = token as usize;
        if id >= v {
            return Err(Error::config(format!(
                "token id {token} outside vocabulary of {v}"
            )));
        }
        out.copy_from_slice(&self.model.embedding[id * n..(id + 1) * n]);
        Ok(())
    }

    /// Run the whole prompt through every block (prefill phase).
    pub fn forward_prompt(&self, prompt: &[u32]) -> Result<PromptRun> {
        let c = &self.model.config;
        if prompt.is_empty() {
            return Err(Error::shape("empty prompt"));
        }
        if prompt.len() > c.capacity {
            return Err(Error::ContextOverflow {
                capacity: c.capacity,
            });
        }
        let n = c.hidden_size;
        let sat0 = instrument::snapshot().quant_saturations;
        let mut x = vec![0.0f32; prompt.len() * n];
        for (i, &tok) in prompt.iter().enumerate() {
            self.embed_into(tok, &mut x[i * n..(i + 1) * n])?;
        }
        let mut caches = self.new_caches()?;
        let mut kv_loads = vec![0u64; c.layers];
        for (i, (layer, cache)) in self.model.layers.iter().zip(&mut caches).enumerate() {
            let loads;
            (x, loads) = self.forward_block(layer, x, prompt.len(), Phase::Prefill, cache, 0)?;
            kv_loads[i] = loads;
        }
        Ok(PromptRun {
            hidden: x,
            caches,
            kv_loads_per_layer: kv_loads,
            quant_saturations: instrument::snapshot().quant_saturations - sat0,
        })
    }

    /// Run one token through every block (decode phase), appending to the
    /// caches.
    pub fn forward_token(&self, caches: &mut [KvCache], token: u32) -> Result<StepRun> {
        let c = &self.model.config;
        if caches.len() != c.layers {
            return Err(Error::shape(format!(
                "{} caches for {} layers",
                caches.len(),
                c.layers
            )));
        }
        let n = c.hidden_size;
        let sat0 = instrument::snapshot().quant_saturations;
        let position = caches[0].len();
        let mut x = vec![0.0f32; n];
        self.embed_into(token, &mut x)?;
        let mut kv_loads = vec![0u64; c.layers];
        for (i, (layer, cache)) in self.model.layers.iter().zip(caches.iter_mut()).enumerate() {
            let loads;
            (x, loads) = self.forward_block(layer, x, 1, Phase::Decode, cache, position)?;
            kv_loads[i] = loads;
        }
        Ok(StepRun {
            hidden: x,
            kv_loads_per_layer: kv_loads,
            quant_saturations: instrument::snapshot().quant_saturations - sat0,
        })
    }

    /// Final norm plus the LM-head projection on the decode engine.
    pub fn logits_from_hidden(&self, hidden_row: &[f32]) -> Result<LogitVector> {
        let normed = rmsnorm(hidden_row, &self.model.final_norm)?;
        lm_head(&normed, &self.model.lm_head)
    }

    /// One transformer block. Returns the new hidden states and the number
    /// of kv block loads the attention performed.
    fn forward_block(
        &self,
        layer: &LayerWeights,
        x: Vec<f32>,
        tokens: usize,
        phase: Phase,
        cache: &mut KvCache,
        start_pos: usize,
    ) -> Result<(Vec<f32>, u64)> {
        let c = &self.model.config;
        let (n, h, d, f) = (c.hidden_size, c.heads, c.head_dim, c.ffn_dim);
        if x.len() != tokens * n {
            return Err(Error::shape(format!(
                "hidden buffer {} != tokens {tokens} * hidden {n}",
                x.len()
            )));
        }
        if phase == Phase::Decode && tokens != 1 {
            return Err(Error::shape("decode phase runs one token at a time"));
        }
        if cache.len() != start_pos {
            return Err(Error::shape(format!(
                "cache length {} != start position {start_pos}",
                cache.len()
            )));
        }
        let mut gauge = ScratchGauge::new();
        gauge.add(x.len() * 4);

        // Attention sub-block: fused norm+quant per row, then projections.
        let (normed, norm_scales) = self.norm_quant_rows(&x, tokens, n, &layer.attn_norm)?;
        gauge.add(normed.len());
        let q_f = quant_linear(&normed, &norm_scales, tokens, &layer.wq, c.lookup_width, Activation::None)?;
        let k_f = quant_linear(&normed, &norm_scales, tokens, &layer.wk, c.lookup_width, Activation::None)?;
        let v_f = quant_linear(&normed, &norm_scales, tokens, &layer.wv, c.lookup_width, Activation::None)?;
        gauge.add((q_f.len() + k_f.len() + v_f.len()) * 4);

        // Head-major views with rotary applied to q and k.
        let positions: Vec<usize> = (start_pos..start_pos + tokens).collect();
        let mut q_heads = to_head_major(&q_f, tokens, h, d);
        let mut k_heads = to_head_major(&k_f, tokens, h, d);
        let v_heads = to_head_major(&v_f, tokens, h, d);
        gauge.add((q_heads.len() + k_heads.len() + v_heads.len()) * 4);
        for head in 0..h {
            let span = head * tokens * d..(head + 1) * tokens * d;
            rope_apply(&mut q_heads[span.clone()], &positions, &self.rope)?;
            rope_apply(&mut k_heads[span], &positions, &self.rope)?;
        }

        // Per-token symmetric quantization across all heads.
        let (q_i8, q_tok, q_scales) = quantize_tokens(&q_heads, tokens, h, d)?;
        let (k_i8, k_tok, k_scales) = quantize_tokens(&k_heads, tokens, h, d)?;
        let (v_i8, v_tok, v_scales) = quantize_tokens(&v_heads, tokens, h, d)?;
        gauge.add(2 * (q_i8.len() + k_i8.len() + v_i8.len()));

        // The cache receives exactly the bytes and scales attention reads.
        for m in 0..tokens {
            cache.append_kv(
                &k_tok[m * h * d..(m + 1) * h * d],
                &v_tok[m * h * d..(m + 1) * h * d],
                k_scales[m],
                v_scales[m],
            )?;
        }

        let (attn, kv_loads) = match phase {
            Phase::Prefill => {
                let batch = PrefillBatch::with_token_scales(
                    q_i8,
                    k_i8,
                    v_i8,
                    q_scales,
                    k_scales,
                    v_scales,
                    tokens,
                    h,
                    d,
                    c.parallelism,
                    c.softmax_scale(),
                )?;
                let (attn, trace) = reverse_prefill_attention(&batch)?;
                (attn, trace.kv_load_count())
            }
            Phase::Decode => {
                let attn = decode_attention(&q_tok, q_scales[0], cache, c.softmax_scale())?;
                (attn, cache.len() as u64)
            }
        };
        gauge.add(attn.len() * 4);

        // Output projection and first residual.
        let (attn_q, attn_scales) = quantize_rows(&attn, tokens, n)?;
        gauge.add(attn_q.len());
        let proj = quant_linear(&attn_q, &attn_scales, tokens, &layer.wo, c.lookup_width, Activation::None)?;
        gauge.add(proj.len() * 4);
        let mut y = x;
        for (yi, pi) in y.iter_mut().zip(&proj) {
            *yi += pi;
        }

        // FFN sub-block: gate (SiLU fused into dequant) times up, then down.
        let (ffn_q, ffn_scales) = self.norm_quant_rows(&y, tokens, n, &layer.ffn_norm)?;
        gauge.add(ffn_q.len());
        let mut gate = quant_linear(&ffn_q, &ffn_scales, tokens, &layer.w_gate, c.lookup_width, Activation::Silu)?;
        let up = quant_linear(&ffn_q, &ffn_scales, tokens, &layer.w_up, c.lookup_width, Activation::None)?;
        gauge.add((gate.len() + up.len()) * 4);
        for (g, u) in gate.iter_mut().zip(&up) {
            *g *= u;
        }
        let (inter_q, inter_scales) = quantize_rows(&gate, tokens, f)?;
        gauge.add(inter_q.len());
        let down = quant_linear(&inter_q, &inter_scales, tokens, &layer.w_down, c.lookup_width, Activation::None)?;
        gauge.add(down.len() * 4);
        for (yi, di) in y.iter_mut().zip(&down) {
            *yi += di;
        }
        Ok((y, kv_loads))
    }

    fn norm_quant_rows(
        &self,
        x: &[f32],
        tokens: usize,
        n: usize,
        norm: &crate::fused::NormParams,
    ) -> Result<(Vec<i8>, Vec<f32>)> {
        let mut q = vec![0i8; tokens * n];
        let mut scales = vec![0.0f32; tokens];
        for m in 0..tokens {
            let (row, s) = rmsnorm_quant_fused(&x[m * n..(m + 1) * n], norm)?;
            q[m * n..(m + 1) * n].copy_from_slice(&row);
            scales[m] = s;
        }
        Ok((q, scales))
    }

    /// Process the whole prompt and emit the first token.
    pub fn prefill(&self, prompt: &[u32]) -> Result<PrefillOutput> {
        let started = Instant::now();
        let run = self.forward_prompt(prompt)?;
        let n = self.model.config.hidden_size;
        let last = &run.hidden[(prompt.len() - 1) * n..];
        let logits = self.logits_from_hidden(last)?;
        let first_token = logits.argmax() as u32;
        Ok(PrefillOutput {
            first_token,
            logits,
            caches: run.caches,
            seconds: started.elapsed().as_secs_f64(),
            kv_loads_per_layer: run.kv_loads_per_layer,
            quant_saturations: run.quant_saturations,
        })
    }

    /// Greedy generation: prefill, then one decode step per token until the
    /// request or the context capacity is exhausted. Total tokens (prompt
    /// plus generated) never exceed capacity.
    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult> {
        let capacity = self.model.config.capacity;
        let prompt_len = request.prompt.len();
        let pre = self.prefill(&request.prompt)?;
        let mut caches = pre.caches;
        let mut kv_loads = pre.kv_loads_per_layer;
        let mut saturations = pre.quant_saturations;

        let mut generated = Vec::new();
        let mut decode_seconds = Vec::new();
        if request.max_new_tokens > 0 && prompt_len < capacity {
            generated.push(pre.first_token);
        }
        while generated.len() < request.max_new_tokens
            && prompt_len + generated.len() < capacity
        {
            let started = Instant::now();
            let last = *generated.last().expect("loop starts with one token");
            let step = self.forward_token(&mut caches, last)?;
            let logits = self.logits_from_hidden(&step.hidden)?;
            for (total, add) in kv_loads.iter_mut().zip(&step.kv_loads_per_layer) {
                *total += add;
            }
            saturations += step.quant_saturations;
            generated.push(logits.argmax() as u32);
            decode_seconds.push(started.elapsed().as_secs_f64());
        }
        Ok(GenerationResult {
            prompt_tokens: prompt_len,
            generated,
            prefill_seconds: pre.seconds,
            decode_seconds,
            kv_loads_per_layer: kv_loads,
            quant_saturations: saturations,
        })
    }
}

/// `[tokens][h*d]` token-major to `[h][tokens][d]` head-major.
fn to_head_major(x: &[f32], tokens: usize, h: usize, d: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for m in 0..tokens {
        for head in 0..h {
            let src = m * h * d + head * d;
            let dst = (head * tokens + m) * d;
            out[dst..dst + d].copy_from_slice(&x[src..src + d]);
        }
    }
    out
}

/// Quantize each token's `h*d` values (gathered across heads) with one
/// absmax scale per token. Returns head-major int8, token-major int8, and
/// the per-token scales.
fn quantize_tokens(
    heads_f32: &[f32],
    tokens: usize,
    h: usize,
    d: usize,
) -> Result<(Vec<i8>, Vec<i8>, Vec<f32>)> {
    let mut head_major = vec![0i8; tokens * h * d];
    let mut token_major = vec![0i8; tokens * h * d];
    let mut scales = vec![0.0f32; tokens];
    let mut row = vec![0.0f32; h * d];
    for m in 0..tokens {
        for head in 0..h {
            let src = (head * tokens + m) * d;
            row[head * d..(head + 1) * d].copy_from_slice(&heads_f32[src..src + d]);
        }
        let (q, s) = absmax_quantize(&row)?;
        scales[m] = s;
        token_major[m * h * d..(m + 1) * h * d].copy_from_slice(&q);
        for head in 0..h {
            let dst = (head * tokens + m) * d;
            head_major[dst..dst + d].copy_from_slice(&q[head * d..(head + 1) * d]);
        }
    }
    Ok((head_major, token_major, scales))
}

/// Per-row absmax quantization of a `[rows x cols]` activation matrix.
fn quantize_rows(x: &[f32], rows: usize, cols: usize) -> Result<(Vec<i8>, Vec<f32>)> {
    let mut q = vec![0i8; rows * cols];
    let mut scales = vec![0.0f32; rows];
    for m in 0..rows {
        let (row, s) = absmax_quantize(&x[m * cols..(m + 1) * cols])?;
        q[m * cols..(m + 1) * cols].copy_from_slice(&row);
        scales[m] = s;
    }
    Ok((q, scales))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_toy_record, make_toy_record_with, Model, ModelConfig};
    use crate::ternary::{pack_matrix, TernaryMatrix};

    fn toy_engine(seed: u64) -> Engine {
        Engine::new(Model::from_record(make_toy_record(seed)).unwrap()).unwrap()
    }

    fn small_engine(seed: u64, config: ModelConfig) -> Engine {
        Engine::new(Model::from_record(make_toy_record_with(seed, config)).unwrap()).unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            hidden_size: 16,
            layers: 2,
            heads: 2,
            head_dim: 8,
            ffn_dim: 32,
            vocab_size: 32,
            capacity: 64,
            group_size: 2,
            tables: 4,
            lookup_width: 4,
            parallelism: 4,
            tied_embeddings: false,
        }
    }

    #[test]
    fn zero_weights_make_blocks_identity() {
        let mut record = make_toy_record_with(3, small_config());
        for t in &mut record.tensors {
            if let crate::model::TensorData::Ternary(p) = &t.data {
                let zero = TernaryMatrix::zeros(p.source_rows(), p.cols());
                t.data = crate::model::TensorData::Ternary(
                    pack_matrix(&zero, p.group_size(), p.tables(), p.scale()).unwrap(),
                );
            }
        }
        let engine = Engine::new(Model::from_record(record).unwrap()).unwrap();
        let prompt = [1u32, 5, 9];
        let run = engine.forward_prompt(&prompt).unwrap();
        let n = engine.config().hidden_size;
        for (i, &tok) in prompt.iter().enumerate() {
            let mut emb = vec![0.0f32; n];
            engine.embed_into(tok, &mut emb).unwrap();
            assert_eq!(&run.hidden[i * n..(i + 1) * n], &emb[..]);
        }
    }

    #[test]
    fn prefill_then_decode_matches_longer_prefill() {
        let engine = small_engine(11, small_config());
        let prompt: Vec<u32> = (0..12).map(|i| (i * 7 + 3) % 32).collect();
        let n = engine.config().hidden_size;
        for t in [1usize, 4, 11] {
            let longer = engine.forward_prompt(&prompt[..t + 1]).unwrap();
            let shorter = engine.forward_prompt(&prompt[..t]).unwrap();
            let mut caches = shorter.caches;
            let step = engine.forward_token(&mut caches, prompt[t]).unwrap();
            let expect = &longer.hidden[t * n..(t + 1) * n];
            for (a, b) in step.hidden.iter().zip(expect) {
                assert!(
                    (a - b).abs() <= 1e-4,
                    "t={t}: decode {a} vs prefill {b}"
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let engine = toy_engine(21);
        let request = GenerationRequest {
            prompt: vec![3, 17, 200, 5],
            max_new_tokens: 8,
        };
        let a = engine.generate(&request).unwrap();
        let b = engine.generate(&request).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.generated.len(), 8);
    }

    #[test]
    fn capacity_caps_total_tokens() {
        let mut config = small_config();
        config.capacity = 32;
        let engine = small_engine(9, config);
        let prompt: Vec<u32> = (0..30).map(|i| i % 32).collect();
        let result = engine
            .generate(&GenerationRequest {
                prompt,
                max_new_tokens: 10,
            })
            .unwrap();
        assert_eq!(result.generated.len(), 2);
        assert_eq!(result.prompt_tokens + result.generated.len(), 32);

        // An overlong prompt is a clean overflow error.
        let long: Vec<u32> = (0..33).map(|i| i % 32).collect();
        assert!(matches!(
            engine.generate(&GenerationRequest {
                prompt: long,
                max_new_tokens: 1
            }),
            Err(Error::ContextOverflow { .. })
        ));
    }

    #[test]
    fn max_new_zero_generates_nothing() {
        let engine = small_engine(2, small_config());
        let result = engine
            .generate(&GenerationRequest {
                prompt: vec![1, 2, 3],
                max_new_tokens: 0,
            })
            .unwrap();
        assert!(result.generated.is_empty());
        assert!(result.decode_seconds.is_empty());
        assert!(result.prefill_seconds >= 0.0);
    }

    #[test]
    fn prefill_kv_loads_match_schedule_formula() {
        let engine = small_engine(4, small_config());
        let prompt: Vec<u32> = (0..8).collect();
        let run = engine.forward_prompt(&prompt).unwrap();
        let expect = crate::sched::closed_form(8, 4, crate::sched::Approach::Reverse)
            .data_block_loads as u64;
        for &loads in &run.kv_loads_per_layer {
            assert_eq!(loads, expect);
        }
    }

    #[test]
    fn rejects_bad_tokens_and_empty_prompt() {
        let engine = small_engine(6, small_config());
        assert!(engine.forward_prompt(&[]).is_err());
        assert!(engine.forward_prompt(&[999]).is_err());
    }

    #[test]
    fn silu_fusion_allocates_no_extra_tensor() {
        let w = pack_matrix(&TernaryMatrix::zeros(8, 8), 2, 2, 1.0).unwrap();
        let q = vec![1i8; 16];
        let scales = vec![0.5f32; 2];
        crate::instrument::reset();
        quant_linear(&q, &scales, 2, &w, 4, Activation::None).unwrap();
        let plain = crate::instrument::snapshot().tensor_allocs;
        crate::instrument::reset();
        quant_linear(&q, &scales, 2, &w, 4, Activation::Silu).unwrap();
        let fused = crate::instrument::snapshot().tensor_allocs;
        assert_eq!(plain, 1);
        assert_eq!(fused, 1);
    }

    #[test]
    fn working_set_does_not_grow_with_layer_count() {
        let peak_for = |layers: usize| {
            let mut config = small_config();
            config.layers = layers;
            let engine = small_engine(13, config);
            crate::instrument::reset();
            engine.forward_prompt(&(0..6).collect::<Vec<u32>>()).unwrap();
            crate::instrument::snapshot().activation_peak_bytes
        };
        let one = peak_for(1);
        let three = peak_for(3);
        assert_eq!(one, three, "scratch must be freed between layers");
        let c = small_config();
        let bound = 30 * 6 * (c.hidden_size + c.ffn_dim) as u64 * 4;
        assert!(one <= bound, "peak {one} exceeds bound {bound}");
    }

    #[test]
    fn saturation_counter_is_quiet_under_absmax() {
        let engine = toy_engine(30);
        let result = engine
            .generate(&GenerationRequest {
                prompt: vec![10, 20, 30],
                max_new_tokens: 4,
            })
            .unwrap();
        assert_eq!(result.quant_saturations, 0);
    }
}
