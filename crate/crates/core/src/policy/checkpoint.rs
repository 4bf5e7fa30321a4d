use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A counter map; merging adds per key, the empty map is the identity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delta(pub BTreeMap<String, i64>);

impl Delta {
    pub fn new() -> Self {
        Delta::default()
    }

    pub fn add(&mut self, key: impl Into<String>, amount: i64) {
        *self.0.entry(key.into()).or_insert(0) += amount;
    }

    pub fn merge(&mut self, other: &Delta) {
        for (k, v) in &other.0 {
            *self.0.entry(k.clone()).or_insert(0) += v;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<K: Into<String>> FromIterator<(K, i64)> for Delta {
    fn from_iter<I: IntoIterator<Item = (K, i64)>>(iter: I) -> Self {
        let mut d = Delta::new();
        for (k, v) in iter {
            d.add(k, v);
        }
        d
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub value: Delta,
    /// Number of deltas applied.
    pub seq: u64,
}

pub fn checkpoint_apply(mut c: CheckpointState, delta: &Delta) -> CheckpointState {
    c.value.merge(delta);
    c.seq += 1;
    c
}

pub fn fold(deltas: &[Delta]) -> CheckpointState {
    deltas.iter().fold(CheckpointState::default(), checkpoint_apply)
}

/// Deltas are buffered, shipped in batches, and committed when a batch's
/// flush completes. Batches may complete in any order.
#[derive(Debug, Clone, Default)]
pub struct AsyncCheckpointer {
    pending: Vec<Delta>,
    in_flight: BTreeMap<u64, Vec<Delta>>,
    next_batch: u64,
    committed: CheckpointState,
    log: Vec<Delta>,
}

impl AsyncCheckpointer {
    pub fn new() -> Self {
        AsyncCheckpointer::default()
    }

    pub fn record(&mut self, delta: Delta) {
        self.log.push(delta.clone());
        self.pending.push(delta);
    }

    /// Moves all buffered deltas into a new in-flight batch.
    pub fn begin_flush(&mut self) -> Option<u64> {
        if self.pending.is_empty() {
            return None;
        }
        let id = self.next_batch;
        self.next_batch += 1;
        self.in_flight.insert(id, std::mem::take(&mut self.pending));
        Some(id)
    }

    /// Commits a batch. Unknown or already committed ids are ignored.
    pub fn complete_flush(&mut self, batch: u64) {
        if let Some(deltas) = self.in_flight.remove(&batch) {
            for d in &deltas {
                self.committed = checkpoint_apply(std::mem::take(&mut self.committed), d);
            }
        }
    }

    pub fn has_unflushed(&self) -> bool {
        !self.pending.is_empty() || !self.in_flight.is_empty()
    }

    pub fn in_flight(&self) -> impl Iterator<Item = u64> + '_ {
        self.in_flight.keys().copied()
    }

    pub fn committed(&self) -> &CheckpointState {
        &self.committed
    }

    /// Every delta ever recorded, in recording order.
    pub fn log(&self) -> &[Delta] {
        &self.log
    }
}
