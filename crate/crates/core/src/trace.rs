//! Load traces: the event stream a schedule emits while it runs.
//!
//! A "data block" is one token's per-head q, k, or v vector — the unit the
//! attention dataflow tiles by. Traces record which blocks were fetched in
//! which order, plus schedule-level accounting (fold iterations, masked
//! cells), so the analyzer can check a kernel against its closed-form cost.

/// One block fetch. `Kv` covers a paired key/value token load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadEvent {
    /// Query token `token` brought into a resident slot.
    Q { token: usize },
    /// Key/value token `token` streamed through the compute unit.
    Kv { token: usize },
}

/// Event list plus schedule accounting counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadTrace {
    pub events: Vec<LoadEvent>,
    /// Fold/compute iterations, including any pipeline-skew cycles.
    pub iterations: u64,
    /// Score cells computed above the causal diagonal (j > i).
    pub masked_cells: u64,
}

impl LoadTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_q(&mut self, token: usize) {
        self.events.push(LoadEvent::Q { token });
    }

    pub fn record_kv(&mut self, token: usize) {
        self.events.push(LoadEvent::Kv { token });
    }

    pub fn q_load_count(&self) -> u64 {
        self.events
            .iter()
            .filter(|e| matches!(e, LoadEvent::Q { .. }))
            .count() as u64
    }

    pub fn kv_load_count(&self) -> u64 {
        self.events
            .iter()
            .filter(|e| matches!(e, LoadEvent::Kv { .. }))
            .count() as u64
    }

    /// The kv token indices in stream order.
    pub fn kv_sequence(&self) -> Vec<usize> {
        self.events
            .iter()
            .filter_map(|e| match e {
                LoadEvent::Kv { token } => Some(*token),
                LoadEvent::Q { .. } => None,
            })
            .collect()
    }
}
