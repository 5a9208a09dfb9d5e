//! Thread-local instrumentation counters.
//!
//! Several contracts in this crate are about *how* a result is computed, not
//! just its value: the fused RMSNorm+quantize path must touch each input
//! element exactly twice, the SiLU hook must not materialize an intermediate
//! tensor, decode attention must scan the cache exactly once per step, and
//! decode scores and the LM head must go through the same matrix-vector
//! routine. The kernels bump these counters as they run; tests reset, run,
//! and assert on the deltas.
//!
//! Counters are thread-local so concurrently running tests never observe
//! each other. The engine itself is single-threaded per invocation, so a
//! counter always reflects the work of the current call chain.

use std::cell::Cell;

thread_local! {
    static RMS_ELEMENT_READS: Cell<u64> = const { Cell::new(0) };
    static TENSOR_ALLOCS: Cell<u64> = const { Cell::new(0) };
    static CACHE_BYTES_READ: Cell<u64> = const { Cell::new(0) };
    static SHARED_MATVEC_CALLS: Cell<u64> = const { Cell::new(0) };
    static RESIDENT_PEAK_BYTES: Cell<u64> = const { Cell::new(0) };
    static ACTIVATION_BYTES: Cell<u64> = const { Cell::new(0) };
    static ACTIVATION_PEAK_BYTES: Cell<u64> = const { Cell::new(0) };
    static QUANT_SATURATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of every counter, taken with [`snapshot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    /// Input elements read by `rmsnorm_quant_fused` (both passes).
    pub rms_element_reads: u64,
    /// Intermediate tensors allocated on the linear output path.
    pub tensor_allocs: u64,
    /// Bytes read out of a KV cache by decode attention.
    pub cache_bytes_read: u64,
    /// Invocations of the shared quantized matrix-vector engine.
    pub shared_matvec_calls: u64,
    /// Peak bytes of resident buffers inside the reverse prefill schedule.
    pub resident_peak_bytes: u64,
    /// Peak bytes of live activation scratch inside a transformer block.
    pub activation_peak_bytes: u64,
    /// Quantizer clamp events (a value landed outside [-127, 127]).
    pub quant_saturations: u64,
}

/// Reset all counters for the current thread.
pub fn reset() {
    RMS_ELEMENT_READS.with(|c| c.set(0));
    TENSOR_ALLOCS.with(|c| c.set(0));
    CACHE_BYTES_READ.with(|c| c.set(0));
    SHARED_MATVEC_CALLS.with(|c| c.set(0));
    RESIDENT_PEAK_BYTES.with(|c| c.set(0));
    ACTIVATION_BYTES.with(|c| c.set(0));
    ACTIVATION_PEAK_BYTES.with(|c| c.set(0));
    QUANT_SATURATIONS.with(|c| c.set(0));
}

/// Read all counters for the current thread.
pub fn snapshot() -> Counters {
    Counters {
        rms_element_reads: RMS_ELEMENT_READS.with(Cell::get),
        tensor_allocs: TENSOR_ALLOCS.with(Cell::get),
        cache_bytes_read: CACHE_BYTES_READ.with(Cell::get),
        shared_matvec_calls: SHARED_MATVEC_CALLS.with(Cell::get),
        resident_peak_bytes: RESIDENT_PEAK_BYTES.with(Cell::get),
        activation_peak_bytes: ACTIVATION_PEAK_BYTES.with(Cell::get),
        quant_saturations: QUANT_SATURATIONS.with(Cell::get),
    }
}

pub(crate) fn count_saturation() {
    QUANT_SATURATIONS.with(|c| c.set(c.get() + 1));
}

pub(crate) fn count_rms_reads(n: u64) {
    RMS_ELEMENT_READS.with(|c| c.set(c.get() + n));
}

pub(crate) fn count_tensor_alloc() {
    TENSOR_ALLOCS.with(|c| c.set(c.get() + 1));
}

pub(crate) fn count_cache_bytes(n: u64) {
    CACHE_BYTES_READ.with(|c| c.set(c.get() + n));
}

pub(crate) fn count_shared_matvec() {
    SHARED_MATVEC_CALLS.with(|c| c.set(c.get() + 1));
}

/// Record the high-water mark of buffers resident in the prefill schedule.
pub(crate) fn record_resident_bytes(n: u64) {
    RESIDENT_PEAK_BYTES.with(|c| c.set(c.get().max(n)));
}

/// Track live activation scratch; callers pair `activation_alloc` with
/// `activation_free` around the buffers they own.
pub(crate) fn activation_alloc(n: u64) {
    ACTIVATION_BYTES.with(|c| {
        let live = c.get() + n;
        c.set(live);
        ACTIVATION_PEAK_BYTES.with(|p| p.set(p.get().max(live)));
    });
}

pub(crate) fn activation_free(n: u64) {
    ACTIVATION_BYTES.with(|c| c.set(c.get().saturating_sub(n)));
}
