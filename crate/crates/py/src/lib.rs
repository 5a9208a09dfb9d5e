//! Python bindings: the packed ternary weights, the lookup-table matmul and
//! its oracles, the fused vector ops, attention (both schedules plus a KV
//! cache), the schedule cost analyzer, and end-to-end toy-model generation.
//!
//! Build with `cargo build --release -p tellme-py`; the resulting cdylib
//! imports as the `tellme_py` module (see python/smoke_test.py).

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tellme::attention::{
    decode_attention as core_decode_attention, naive_causal_attention as core_naive_attention,
    reverse_prefill_attention as core_reverse_attention, FusionState, KvCache as CoreKvCache,
    PrefillBatch,
};
use tellme::error::Error;
use tellme::fused;
use tellme::matmul::{self, QuantTensor};
use tellme::model::{make_toy_record, Model, ModelConfig};
use tellme::runtime::{Engine, GenerationRequest};
use tellme::sched::{self, Approach};
use tellme::ternary::{self, PackedTernaryMatrix as CorePacked, TernaryMatrix};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_i8(values: &[i32], what: &str) -> PyResult<Vec<i8>> {
    values
        .iter()
        .map(|&v| {
            i8::try_from(v)
                .ok()
                .filter(|&b| b != i8::MIN)
                .ok_or_else(|| {
                    PyValueError::new_err(format!("{what}: value {v} outside int8 range [-127, 127]"))
                })
        })
        .collect()
}

fn trits_from(values: &[i32]) -> PyResult<Vec<i8>> {
    values
        .iter()
        .map(|&v| match v {
            -1 | 0 | 1 => Ok(v as i8),
            other => Err(PyValueError::new_err(format!(
                "trit value {other} must be -1, 0, or +1"
            ))),
        })
        .collect()
}

/// Encode a group of trits into its base-3 lookup index.
#[pyfunction]
fn encode_group(trits: Vec<i32>) -> PyResult<u32> {
    let trits = trits_from(&trits)?;
    Ok(ternary::encode_group(&trits).map_err(to_py)? as u32)
}

/// Decode a base-3 lookup index back into its trits.
#[pyfunction]
fn decode_group(index: u32, group_size: usize) -> PyResult<Vec<i32>> {
    let index =
        u8::try_from(index).map_err(|_| PyValueError::new_err("index out of byte range"))?;
    Ok(ternary::decode_group(index, group_size)
        .map_err(to_py)?
        .into_iter()
        .map(|t| t as i32)
        .collect())
}

/// Ternary weights packed offline into grouped base-3 indices.
#[pyclass(name = "PackedTernaryMatrix")]
struct PyPackedTernaryMatrix {
    inner: CorePacked,
}

#[pymethods]
impl PyPackedTernaryMatrix {
    /// Pack row-major trits of shape (rows, cols) with group size G and
    /// table count T.
    #[new]
    #[pyo3(signature = (rows, cols, trits, group_size, tables, scale=1.0))]
    fn new(
        rows: usize,
        cols: usize,
        trits: Vec<i32>,
        group_size: usize,
        tables: usize,
        scale: f32,
    ) -> PyResult<Self> {
        let w = TernaryMatrix::new(rows, cols, trits_from(&trits)?).map_err(to_py)?;
        let inner = ternary::pack_matrix(&w, group_size, tables, scale).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.source_rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    #[getter]
    fn group_size(&self) -> usize {
        self.inner.group_size()
    }

    #[getter]
    fn tables(&self) -> usize {
        self.inner.tables()
    }

    #[getter]
    fn super_rows(&self) -> usize {
        self.inner.super_rows()
    }

    #[getter]
    fn scale(&self) -> f32 {
        self.inner.scale()
    }

    /// The raw group indices, one byte each.
    fn indices(&self) -> Vec<u32> {
        self.inner.indices().iter().map(|&b| b as u32).collect()
    }

    /// Unpack back to row-major trits.
    fn unpack(&self) -> PyResult<Vec<i32>> {
        let w = ternary::unpack_matrix(&self.inner, self.inner.source_rows()).map_err(to_py)?;
        Ok(w.values().iter().map(|&t| t as i32).collect())
    }
}

/// Table-lookup ternary matmul. `activations` is row-major (m, n) int8;
/// returns the row-major (m, cols) integer accumulators.
#[pyfunction]
#[pyo3(signature = (activations, m, n, weights, lookup_width=16))]
fn tl_matmul(
    activations: Vec<i32>,
    m: usize,
    n: usize,
    weights: &PyPackedTernaryMatrix,
    lookup_width: usize,
) -> PyResult<Vec<Vec<i32>>> {
    let a = QuantTensor::new(m, n, to_i8(&activations, "activations")?, 1.0).map_err(to_py)?;
    matmul::tl_matmul(&a, &weights.inner, lookup_width).map_err(to_py)
}

/// Select-add oracle over dense trits.
#[pyfunction]
fn naive_ternary_matmul(
    activations: Vec<i32>,
    m: usize,
    n: usize,
    weight_trits: Vec<i32>,
    cols: usize,
) -> PyResult<Vec<Vec<i32>>> {
    let a = QuantTensor::new(m, n, to_i8(&activations, "activations")?, 1.0).map_err(to_py)?;
    let w = TernaryMatrix::new(n, cols, trits_from(&weight_trits)?).map_err(to_py)?;
    matmul::naive_ternary_matmul(&a, &w).map_err(to_py)
}

/// Half-table variant (mirror indices negate).
#[pyfunction]
fn partial_table_matmul(
    activations: Vec<i32>,
    m: usize,
    n: usize,
    weights: &PyPackedTernaryMatrix,
) -> PyResult<Vec<Vec<i32>>> {
    let a = QuantTensor::new(m, n, to_i8(&activations, "activations")?, 1.0).map_err(to_py)?;
    matmul::partial_table_matmul(&a, &weights.inner).map_err(to_py)
}

/// Two-pass symmetric int8 quantization; returns (values, scale).
#[pyfunction]
fn absmax_quantize(x: Vec<f32>) -> PyResult<(Vec<i32>, f32)> {
    let (q, scale) = fused::absmax_quantize(&x).map_err(to_py)?;
    Ok((q.into_iter().map(|v| v as i32).collect(), scale))
}

/// Fused RMSNorm + absmax quantization; returns (values, scale).
#[pyfunction]
#[pyo3(signature = (x, gamma, epsilon=1e-5))]
fn rmsnorm_quant_fused(x: Vec<f32>, gamma: Vec<f32>, epsilon: f32) -> PyResult<(Vec<i32>, f32)> {
    let params = fused::NormParams::new(gamma, epsilon).map_err(to_py)?;
    let (q, scale) = fused::rmsnorm_quant_fused(&x, &params).map_err(to_py)?;
    Ok((q.into_iter().map(|v| v as i32).collect(), scale))
}

/// Elementwise x * sigmoid(x).
#[pyfunction]
fn silu(x: Vec<f32>) -> Vec<f32> {
    x.into_iter().map(fused::silu).collect()
}

/// Rotate per-pair features; `x` is row-major (tokens, head_dim).
#[pyfunction]
#[pyo3(signature = (x, positions, head_dim, theta=10000.0))]
fn rope_apply(
    mut x: Vec<f32>,
    positions: Vec<usize>,
    head_dim: usize,
    theta: f32,
) -> PyResult<Vec<f32>> {
    let capacity = positions.iter().max().map_or(1, |&m| m + 1);
    let params = fused::RopeParams::new(head_dim, theta, capacity).map_err(to_py)?;
    fused::rope_apply(&mut x, &positions, &params).map_err(to_py)?;
    Ok(x)
}

/// Fold a score/value stream through the online-softmax recurrence and
/// finalize: the streaming equivalent of softmax(scores) @ values.
#[pyfunction]
fn online_softmax_fold(scores: Vec<f64>, values: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    if scores.len() != values.len() {
        return Err(PyValueError::new_err("scores and values length mismatch"));
    }
    let dim = values.first().map_or(0, Vec::len);
    let mut state = FusionState::new(dim);
    for (s, v) in scores.iter().zip(&values) {
        state.online_step(*s, v).map_err(to_py)?;
    }
    state.finalize().map_err(to_py)
}

fn build_batch(
    q: Vec<i32>,
    k: Vec<i32>,
    v: Vec<i32>,
    tokens: usize,
    heads: usize,
    head_dim: usize,
    scales: (f32, f32, f32),
    parallelism: usize,
) -> PyResult<PrefillBatch> {
    let softmax_scale = 1.0 / (head_dim as f32).sqrt();
    PrefillBatch::new(
        to_i8(&q, "q")?,
        to_i8(&k, "k")?,
        to_i8(&v, "v")?,
        tokens,
        heads,
        head_dim,
        scales,
        parallelism,
        softmax_scale,
    )
    .map_err(to_py)
}

/// Reverse-scheduled fused causal attention. Tensors are flat
/// `[heads][tokens][head_dim]` int8. Returns (output, kv_loads, kv_sequence).
#[pyfunction]
#[pyo3(signature = (q, k, v, tokens, heads, head_dim, scales=(1.0, 1.0, 1.0), parallelism=4))]
#[allow(clippy::too_many_arguments)]
fn reverse_prefill_attention(
    q: Vec<i32>,
    k: Vec<i32>,
    v: Vec<i32>,
    tokens: usize,
    heads: usize,
    head_dim: usize,
    scales: (f32, f32, f32),
    parallelism: usize,
) -> PyResult<(Vec<f32>, u64, Vec<usize>)> {
    let batch = build_batch(q, k, v, tokens, heads, head_dim, scales, parallelism)?;
    let (out, trace) = core_reverse_attention(&batch).map_err(to_py)?;
    Ok((out, trace.kv_load_count(), trace.kv_sequence()))
}

/// Materialized causal attention (the oracle).
#[pyfunction]
#[pyo3(signature = (q, k, v, tokens, heads, head_dim, scales=(1.0, 1.0, 1.0)))]
fn naive_causal_attention(
    q: Vec<i32>,
    k: Vec<i32>,
    v: Vec<i32>,
    tokens: usize,
    heads: usize,
    head_dim: usize,
    scales: (f32, f32, f32),
) -> PyResult<Vec<f32>> {
    let batch = build_batch(q, k, v, tokens, heads, head_dim, scales, 1)?;
    core_naive_attention(&batch).map_err(to_py)
}

/// Append-only int8 KV cache with decoupled decode attention.
#[pyclass(name = "KvCache")]
struct PyKvCache {
    inner: CoreKvCache,
}

#[pymethods]
impl PyKvCache {
    #[new]
    fn new(heads: usize, head_dim: usize, capacity: usize) -> PyResult<Self> {
        Ok(Self {
            inner: CoreKvCache::new(heads, head_dim, capacity).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    /// Append one token's `[heads * head_dim]` keys and values.
    fn append_kv(&mut self, k: Vec<i32>, v: Vec<i32>, k_scale: f32, v_scale: f32) -> PyResult<()> {
        self.inner
            .append_kv(&to_i8(&k, "k")?, &to_i8(&v, "v")?, k_scale, v_scale)
            .map_err(to_py)
    }

    /// Scores, softmax, and value aggregation against the whole cache.
    #[pyo3(signature = (q, q_scale, softmax_scale=None))]
    fn decode_attention(
        &self,
        q: Vec<i32>,
        q_scale: f32,
        softmax_scale: Option<f32>,
    ) -> PyResult<Vec<f32>> {
        let scale =
            softmax_scale.unwrap_or_else(|| 1.0 / (self.inner.head_dim() as f32).sqrt());
        core_decode_attention(&to_i8(&q, "q")?, q_scale, &self.inner, scale).map_err(to_py)
    }
}

fn approach_from(name: &str) -> PyResult<Approach> {
    Approach::parse(name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown approach {name:?}")))
}

fn cost_dict(py: Python<'_>, cost: &sched::ScheduleCost) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    d.set_item("approach", cost.approach.name())?;
    d.set_item("n", cost.n)?;
    d.set_item("p", cost.p)?;
    d.set_item("loads", cost.data_block_loads)?;
    d.set_item("iterations", cost.iteration_count)?;
    d.set_item("bandwidth_factor", cost.bandwidth_factor)?;
    d.set_item("masked_fraction", cost.redundant_masked_fraction)?;
    Ok(d.into())
}

/// Closed-form schedule cost for "reverse", "naive", or "dense".
#[pyfunction]
fn closed_form(py: Python<'_>, n: usize, p: usize, approach: &str) -> PyResult<Py<PyDict>> {
    cost_dict(py, &sched::closed_form(n, p, approach_from(approach)?))
}

/// Discrete reverse-schedule simulation; returns (cost, kv_sequence).
#[pyfunction]
fn simulate_reverse(py: Python<'_>, n: usize, p: usize) -> PyResult<(Py<PyDict>, Vec<usize>)> {
    let (cost, trace) = sched::simulate_reverse(n, p);
    Ok((cost_dict(py, &cost)?, trace.kv_sequence()))
}

/// Fraction of computed score cells wasted on the causal mask.
#[pyfunction]
fn masked_waste(n: usize, p: usize, approach: &str) -> PyResult<f64> {
    Ok(sched::masked_waste(n, p, approach_from(approach)?))
}

/// Byte and MAC counts for one attention invocation per phase; returns
/// (prefill, decode) dicts.
#[pyfunction]
fn phase_profile(
    py: Python<'_>,
    heads: usize,
    head_dim: usize,
    prompt_n: usize,
    cached_m: usize,
) -> PyResult<(Py<PyDict>, Py<PyDict>)> {
    let config = ModelConfig {
        hidden_size: heads * head_dim,
        heads,
        head_dim,
        ..ModelConfig::toy()
    };
    let (pre, dec) = sched::phase_profile(&config, prompt_n, cached_m).map_err(to_py)?;
    let mk = |p: &sched::PhaseProfile| -> PyResult<Py<PyDict>> {
        let d = PyDict::new(py);
        d.set_item("phase", p.phase.name())?;
        d.set_item("bytes_moved", p.bytes_moved)?;
        d.set_item("mac_ops", p.mac_ops)?;
        d.set_item("arithmetic_intensity", p.arithmetic_intensity)?;
        Ok(d.into())
    };
    Ok((mk(&pre)?, mk(&dec)?))
}

/// Write the deterministic toy checkpoint to `path`.
#[pyfunction]
fn make_toy_weights(seed: u64, path: &str) -> PyResult<()> {
    tellme::container::write_weights(path, &make_toy_record(seed)).map_err(to_py)
}

/// Greedy generation from a weight file; returns a report dict.
#[pyfunction]
#[pyo3(signature = (weights_path, prompt_ids, max_new_tokens, parallelism=None))]
fn generate(
    py: Python<'_>,
    weights_path: &str,
    prompt_ids: Vec<u32>,
    max_new_tokens: usize,
    parallelism: Option<usize>,
) -> PyResult<Py<PyDict>> {
    let mut record = tellme::container::read_weights(weights_path).map_err(to_py)?;
    if let Some(p) = parallelism {
        record.config.parallelism = p;
    }
    let engine = Engine::new(Model::from_record(record).map_err(to_py)?).map_err(to_py)?;
    let result = engine
        .generate(&GenerationRequest {
            prompt: prompt_ids,
            max_new_tokens,
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("generated_ids", &result.generated)?;
    d.set_item("prompt_tokens", result.prompt_tokens)?;
    d.set_item("prefill_seconds", result.prefill_seconds)?;
    d.set_item("decode_tokens_per_second", result.decode_tokens_per_second())?;
    d.set_item("kv_loads_per_layer", &result.kv_loads_per_layer)?;
    d.set_item("quant_saturation_count", result.quant_saturations)?;
    Ok(d.into())
}

#[pymodule]
fn tellme_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPackedTernaryMatrix>()?;
    m.add_class::<PyKvCache>()?;
    m.add_function(wrap_pyfunction!(encode_group, m)?)?;
    m.add_function(wrap_pyfunction!(decode_group, m)?)?;
    m.add_function(wrap_pyfunction!(tl_matmul, m)?)?;
    m.add_function(wrap_pyfunction!(naive_ternary_matmul, m)?)?;
    m.add_function(wrap_pyfunction!(partial_table_matmul, m)?)?;
    m.add_function(wrap_pyfunction!(absmax_quantize, m)?)?;
    m.add_function(wrap_pyfunction!(rmsnorm_quant_fused, m)?)?;
    m.add_function(wrap_pyfunction!(silu, m)?)?;
    m.add_function(wrap_pyfunction!(rope_apply, m)?)?;
    m.add_function(wrap_pyfunction!(online_softmax_fold, m)?)?;
    m.add_function(wrap_pyfunction!(reverse_prefill_attention, m)?)?;
    m.add_function(wrap_pyfunction!(naive_causal_attention, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_reverse, m)?)?;
    m.add_function(wrap_pyfunction!(masked_waste, m)?)?;
    m.add_function(wrap_pyfunction!(phase_profile, m)?)?;
    m.add_function(wrap_pyfunction!(make_toy_weights, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
