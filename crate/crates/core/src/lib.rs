//! Ternary-LLM inference engine.
//!
//! Weights live in {-1, 0, +1} and get packed offline into grouped base-3
//! lookup indices; activations are symmetric int8. On top of that sit:
//!
//! - [`ternary`] / [`matmul`]: the table-lookup ternary matmul — build all
//!   3^G signed sums of each activation group once, then address them with
//!   packed weight indices instead of multiplying;
//! - [`attention`]: fused prefill attention with the reverse-reordered
//!   schedule (online softmax, masked work skipped, early kv eviction) and
//!   decoupled decode attention over an append-only KV cache, whose
//!   matrix-vector engine the LM head reuses;
//! - [`fused`]: RMSNorm fused with absmax quantization in two passes, SiLU
//!   fused into the linear dequant loop, rotary embedding;
//! - [`sched`]: closed-form and simulated cost accounting for the attention
//!   schedules, plus the prefill/decode arithmetic-intensity profile;
//! - [`runtime`] / [`model`] / [`container`]: end-to-end greedy inference,
//!   a deterministic toy checkpoint, and the TELLME01 weight file;
//! - [`reference`]: a straight-line fp64 implementation used as the
//!   end-to-end oracle.

pub mod attention;
pub mod container;
pub mod dump;
pub mod error;
pub mod fused;
pub mod instrument;
pub mod matmul;
pub mod model;
pub mod reference;
pub mod runtime;
pub mod sched;
pub mod ternary;
pub mod trace;

pub use error::{Error, Result};
