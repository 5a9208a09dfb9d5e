//! Attention-schedule cost accounting: closed forms, a discrete simulator
//! for the reverse schedule, masked-work fractions, and the prefill/decode
//! arithmetic-intensity profile.
//!
//! Counting convention (one "data block" = one token's per-head q, k, or v
//! vector):
//! - reverse: loads count kv blocks only; every iteration streams exactly
//!   one kv block, so iterations equal loads and the bandwidth factor is 1.
//! - naive: each of the p lanes fetches its own kv stream, so loads count
//!   kv plus the N query loads while iterations are shared across lanes.
//! - dense: kv blocks stream once per cycle including the p-1 wavefront
//!   skew cycles; loads count kv plus the N query loads.
//!
//! The closed forms are exact when p divides N and approximate otherwise;
//! the simulator is authoritative for ragged shapes.

use crate::error::Result;
use crate::model::ModelConfig;
use crate::trace::LoadTrace;
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approach {
    Reverse,
    Naive,
    Dense,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Reverse, Approach::Naive, Approach::Dense];

    pub fn name(&self) -> &'static str {
        match self {
            Approach::Reverse => "reverse",
            Approach::Naive => "naive",
            Approach::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Option<Approach> {
        match s {
            "reverse" => Some(Approach::Reverse),
            "naive" => Some(Approach::Naive),
            "dense" => Some(Approach::Dense),
            _ => None,
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cost of running one schedule at sequence length `n` with parallelism `p`.
/// Loads and iterations are integral whenever p divides N.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleCost {
    pub approach: Approach,
    pub n: usize,
    pub p: usize,
    pub data_block_loads: f64,
    pub iteration_count: f64,
    /// Per-iteration loads relative to the reverse schedule's one block.
    pub bandwidth_factor: f64,
    /// Fraction of computed score cells killed by the causal mask.
    pub redundant_masked_fraction: f64,
}

/// Fraction of computed score cells with j > i. The reverse schedule skips
/// them outright; naive and dense compute the full N x N grid.
pub fn masked_waste(n: usize, _p: usize, approach: Approach) -> f64 {
    match approach {
        Approach::Reverse => 0.0,
        Approach::Naive | Approach::Dense => {
            if n == 0 {
                0.0
            } else {
                (n as f64 - 1.0) / (2.0 * n as f64)
            }
        }
    }
}

/// Evaluate the closed-form cost expression for one schedule.
pub fn closed_form(n: usize, p: usize, approach: Approach) -> ScheduleCost {
    let nf = n as f64;
    let pf = p as f64;
    let (loads, iterations) = match approach {
        Approach::Reverse => {
            let v = nf * nf / (2.0 * pf) + nf / 2.0;
            (v, v)
        }
        Approach::Naive => (nf * nf + nf, nf * nf / pf),
        Approach::Dense => (
            nf * nf / pf + nf + pf - 1.0,
            nf * nf / pf + pf - 1.0,
        ),
    };
    ScheduleCost {
        approach,
        n,
        p,
        data_block_loads: loads,
        iteration_count: iterations,
        bandwidth_factor: loads / iterations,
        redundant_masked_fraction: masked_waste(n, p, approach),
    }
}

/// Discrete simulation of the reverse schedule: batch p queries from the
/// top, stream kv from token 0 to the batch maximum, evict the batch's kv
/// tokens afterwards. Matches [`closed_form`] exactly when p divides N.
pub fn simulate_reverse(n: usize, p: usize) -> (ScheduleCost, LoadTrace) {
    let mut trace = LoadTrace::new();
    let mut hi = n;
    while hi > 0 {
        let lo = hi.saturating_sub(p);
        for slot in 0..(hi - lo) {
            trace.record_q(hi - 1 - slot);
        }
        for j in 0..hi {
            trace.record_kv(j);
            trace.iterations += 1;
        }
        hi = lo;
    }
    let loads = trace.kv_load_count() as f64;
    let cost = ScheduleCost {
        approach: Approach::Reverse,
        n,
        p,
        data_block_loads: loads,
        iteration_count: trace.iterations as f64,
        bandwidth_factor: if trace.iterations > 0 {
            loads / trace.iterations as f64
        } else {
            1.0
        },
        redundant_masked_fraction: 0.0,
    };
    (cost, trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prefill,
    Decode,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
        }
    }
}

/// Analytic byte and MAC counts for one attention invocation of a phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    pub phase: Phase,
    pub bytes_moved: u64,
    pub mac_ops: u64,
    pub arithmetic_intensity: f64,
}

impl PhaseProfile {
    fn new(phase: Phase, bytes_moved: u64, mac_ops: u64) -> Self {
        Self {
            phase,
            bytes_moved,
            mac_ops,
            arithmetic_intensity: mac_ops as f64 / bytes_moved as f64,
        }
    }
}

/// Profile one prefill attention pass over `prompt_n` tokens and one decode
/// step against `cached_m` tokens.
///
/// Counting model, per head, int8 data at one byte per element:
/// - prefill moves each q, k, and v token once (3*N*d bytes) and computes
///   2*d MACs for every causal (i, j) pair — N(N+1)*d in total;
/// - decode moves the query vector plus full K and V scans ((2M+1)*d bytes)
///   for 2*M*d MACs.
///
/// Prefill intensity grows with N while decode stays below one MAC/byte,
/// which is the memory-bound-decode claim in checkable form; the two meet
/// exactly at the degenerate N = M = 1 point.
pub fn phase_profile(
    config: &ModelConfig,
    prompt_n: usize,
    cached_m: usize,
) -> Result<(PhaseProfile, PhaseProfile)> {
    config.validate()?;
    let h = config.heads as u64;
    let d = config.head_dim as u64;
    let n = prompt_n as u64;
    let m = cached_m as u64;

    let prefill = PhaseProfile::new(Phase::Prefill, 3 * n * d * h, n * (n + 1) * d * h);
    let decode = PhaseProfile::new(Phase::Decode, (2 * m + 1) * d * h, 2 * m * d * h);

    if prompt_n >= 2 && cached_m >= 1 {
        assert!(
            prefill.arithmetic_intensity > decode.arithmetic_intensity,
            "prefill must be more compute-dense than decode (N={prompt_n}, M={cached_m})"
        );
    }
    Ok((prefill, decode))
}

/// CSV with the stable column order
/// `approach,N,p,loads,iterations,bandwidth_factor,masked_fraction`.
pub fn format_csv(costs: &[ScheduleCost]) -> String {
    let mut out = String::from("approach,N,p,loads,iterations,bandwidth_factor,masked_fraction\n");
    for c in costs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.approach,
            c.n,
            c.p,
            c.data_block_loads,
            c.iteration_count,
            c.bandwidth_factor,
            c.redundant_masked_fraction
        ));
    }
    out
}

/// Parse [`format_csv`] output back (round-trip checks and the golden test).
pub fn parse_csv(text: &str) -> Result<Vec<ScheduleCost>> {
    let mut costs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || crate::error::Error::Corrupt(format!("csv line {}: {line:?}", i + 1));
        if fields.len() != 7 {
            return Err(bad());
        }
        let approach = Approach::parse(fields[0]).ok_or_else(bad)?;
        costs.push(ScheduleCost {
            approach,
            n: fields[1].parse().map_err(|_| bad())?,
            p: fields[2].parse().map_err(|_| bad())?,
            data_block_loads: fields[3].parse().map_err(|_| bad())?,
            iteration_count: fields[4].parse().map_err(|_| bad())?,
            bandwidth_factor: fields[5].parse().map_err(|_| bad())?,
            redundant_masked_fraction: fields[6].parse().map_err(|_| bad())?,
        });
    }
    Ok(costs)
}

/// One row per (N, approach), approaches in reverse/naive/dense order.
pub fn sweep(ns: &[usize], p: usize) -> Vec<ScheduleCost> {
    let mut costs = Vec::with_capacity(ns.len() * 3);
    for &n in ns {
        for approach in Approach::ALL {
            costs.push(closed_form(n, p, approach));
        }
    }
    costs
}

pub fn emit_csv(costs: &[ScheduleCost], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_csv(costs))?;
    Ok(())
}
