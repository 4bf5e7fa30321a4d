//! Domain types shared by the simulator, the policies and the gateway.
//!
//! Time is integer virtual milliseconds everywhere. A [`Slot`] is one warm
//! execution environment moving through a five-state lifecycle; a
//! [`SystemState`] is the tuple of live slots, running requests, the wait
//! queue and the per-function history windows.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Millis = u64;
pub type RequestId = u64;
pub type SlotId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("illegal transition: {event:?} while {state:?}")]
    IllegalTransition { state: SlotState, event: LifecycleEvent },
    #[error("history window is empty")]
    EmptyWindow,
    #[error("invalid request {id}: {reason}")]
    InvalidRequest { id: RequestId, reason: String },
    #[error("state invariant violated: {0}")]
    Invariant(String),
}

/// One function invocation. `service_time` is ground truth owned by the
/// engine; policies only ever see a [`RequestView`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: RequestId,
    pub function_id: String,
    pub arrival_time: Millis,
    pub service_time: Millis,
    pub memory_gb: f64,
    pub features: Vec<f64>,
    pub correlation_id: String,
}

impl RequestRecord {
    pub fn new(
        id: RequestId,
        function_id: impl Into<String>,
        arrival_time: Millis,
        service_time: Millis,
        memory_gb: f64,
        features: Vec<f64>,
    ) -> Self {
        let function_id = function_id.into();
        let correlation_id = format!("{function_id}-{id:08x}");
        RequestRecord {
            id,
            function_id,
            arrival_time,
            service_time,
            memory_gb,
            features,
            correlation_id,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |reason: &str| DomainError::InvalidRequest {
            id: self.id,
            reason: reason.to_string(),
        };
        if self.service_time == 0 {
            return Err(bad("service_time must be > 0"));
        }
        if !(self.memory_gb > 0.0) || !self.memory_gb.is_finite() {
            return Err(bad("memory_gb must be > 0"));
        }
        if self.features.iter().any(|f| !f.is_finite()) {
            return Err(bad("features must be finite"));
        }
        Ok(())
    }

    pub fn view(&self) -> RequestView<'_> {
        RequestView {
            id: self.id,
            function_id: &self.function_id,
            arrival_time: self.arrival_time,
            memory_gb: self.memory_gb,
            features: &self.features,
            correlation_id: &self.correlation_id,
        }
    }
}

/// What a policy may know about a request before it completes.
#[derive(Debug, Clone, Copy)]
pub struct RequestView<'a> {
    pub id: RequestId,
    pub function_id: &'a str,
    pub arrival_time: Millis,
    pub memory_gb: f64,
    pub features: &'a [f64],
    pub correlation_id: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotState {
    Provisioning,
    Busy,
    Idle,
    Draining,
    Terminated,
}

impl SlotState {
    pub const ALL: [SlotState; 5] = [
        SlotState::Provisioning,
        SlotState::Busy,
        SlotState::Idle,
        SlotState::Draining,
        SlotState::Terminated,
    ];

    /// Provisioning, Busy and Idle slots count as capacity.
    pub fn is_live(self) -> bool {
        matches!(self, SlotState::Provisioning | SlotState::Busy | SlotState::Idle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LifecycleEvent {
    /// A request starts executing (after provisioning, or on a warm slot).
    Start,
    /// Provisioning finished with no request bound to the slot.
    Warmed,
    ProvisionFailed,
    Complete,
    Drain,
    Terminate,
}

impl LifecycleEvent {
    pub const ALL: [LifecycleEvent; 6] = [
        LifecycleEvent::Start,
        LifecycleEvent::Warmed,
        LifecycleEvent::ProvisionFailed,
        LifecycleEvent::Complete,
        LifecycleEvent::Drain,
        LifecycleEvent::Terminate,
    ];
}

/// The legal transition table. `None` means the pair is rejected.
pub fn next_state(state: SlotState, event: LifecycleEvent) -> Option<SlotState> {
    use LifecycleEvent as E;
    use SlotState as S;
    match (state, event) {
        (S::Provisioning, E::Start) => Some(S::Busy),
        (S::Provisioning, E::Warmed) => Some(S::Idle),
        (S::Provisioning, E::ProvisionFailed) => Some(S::Terminated),
        (S::Busy, E::Complete) => Some(S::Idle),
        (S::Busy, E::Drain) => Some(S::Draining),
        (S::Idle, E::Start) => Some(S::Busy),
        (S::Idle, E::Drain) => Some(S::Draining),
        (S::Draining, E::Terminate) => Some(S::Terminated),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub id: SlotId,
    pub function_id: String,
    pub state: SlotState,
    pub created_at: Millis,
    pub provision_done_at: Option<Millis>,
    pub last_used_at: Millis,
    pub idle_deadline: Millis,
    pub memory_gb: f64,
    pub busy_time_accum: Millis,
    pub busy_since: Option<Millis>,
    pub terminated_at: Option<Millis>,
    /// Completed busy intervals, in order.
    pub busy_intervals: Vec<(Millis, Millis)>,
    /// A Busy slot marked for retirement is terminated when it completes.
    pub retire_on_complete: bool,
}

impl Slot {
    pub fn provisioning(id: SlotId, function_id: impl Into<String>, memory_gb: f64, now: Millis) -> Self {
        Slot {
            id,
            function_id: function_id.into(),
            state: SlotState::Provisioning,
            created_at: now,
            provision_done_at: None,
            last_used_at: now,
            idle_deadline: now,
            memory_gb,
            busy_time_accum: 0,
            busy_since: None,
            terminated_at: None,
            busy_intervals: Vec::new(),
            retire_on_complete: false,
        }
    }

    /// `[created_at, terminated_at)`, open-ended while alive.
    pub fn alive_interval(&self) -> (Millis, Option<Millis>) {
        (self.created_at, self.terminated_at)
    }

    pub fn alive_time(&self, now: Millis) -> Millis {
        self.terminated_at.unwrap_or(now).saturating_sub(self.created_at)
    }
}

/// Applies one lifecycle event. Illegal pairs are rejected with the slot untouched.
pub fn transition(mut slot: Slot, event: LifecycleEvent, now: Millis) -> Result<Slot, DomainError> {
    let to = next_state(slot.state, event).ok_or(DomainError::IllegalTransition {
        state: slot.state,
        event,
    })?;
    match (slot.state, event) {
        (SlotState::Provisioning, LifecycleEvent::Start) => {
            slot.provision_done_at = Some(now);
            slot.busy_since = Some(now);
        }
        (SlotState::Provisioning, LifecycleEvent::Warmed) => {
            slot.provision_done_at = Some(now);
            slot.last_used_at = now;
            slot.idle_deadline = now;
        }
        (SlotState::Idle, LifecycleEvent::Start) => slot.busy_since = Some(now),
        (SlotState::Busy, LifecycleEvent::Complete) | (SlotState::Busy, LifecycleEvent::Drain) => {
            if event == LifecycleEvent::Complete {
                let since = slot.busy_since.take().unwrap_or(now);
                slot.busy_time_accum += now.saturating_sub(since);
                slot.busy_intervals.push((since, now));
                slot.last_used_at = now;
                slot.idle_deadline = now;
            } else {
                slot.retire_on_complete = true;
            }
        }
        (_, LifecycleEvent::ProvisionFailed) | (_, LifecycleEvent::Terminate) => {
            // A slot drained while busy closes its last busy interval here.
            if let Some(since) = slot.busy_since.take() {
                slot.busy_time_accum += now.saturating_sub(since);
                slot.busy_intervals.push((since, now));
                slot.last_used_at = now;
            }
            slot.terminated_at = Some(now);
        }
        _ => {}
    }
    // Busy -> Draining keeps executing; the engine finishes it before terminating.
    slot.state = to;
    Ok(slot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryStats {
    pub mean_ia: f64,
    pub var_ia: f64,
    pub mean_ex: f64,
    pub var_ex: f64,
    pub cv_ex: f64,
    /// Fewer than two samples in a ring; the corresponding variance is reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Ring {
    values: VecDeque<f64>,
    sum: f64,
    sum_sq: f64,
    evictions: usize,
}

impl Ring {
    fn new(capacity: usize) -> Self {
        Ring {
            values: VecDeque::with_capacity(capacity),
            sum: 0.0,
            sum_sq: 0.0,
            evictions: 0,
        }
    }

    fn push(&mut self, value: f64, capacity: usize) {
        if self.values.len() == capacity {
            if let Some(old) = self.values.pop_front() {
                self.sum -= old;
                self.sum_sq -= old * old;
                self.evictions += 1;
            }
        }
        self.values.push_back(value);
        self.sum += value;
        self.sum_sq += value * value;
        // Bound cancellation drift: an exact rebuild once per full turnover.
        if self.evictions >= capacity {
            self.evictions = 0;
            self.sum = self.values.iter().sum();
            self.sum_sq = self.values.iter().map(|v| v * v).sum();
        }
    }

    fn mean(&self) -> f64 {
        self.sum / self.values.len() as f64
    }

    fn variance(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        (self.sum_sq / n as f64 - mean * mean).max(0.0)
    }
}

/// Bounded ring of recent inter-arrival and execution-time samples with
/// running sums, so mean and variance are O(1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    capacity: usize,
    inter_arrival: Ring,
    exec_time: Ring,
    pushes: u64,
}

impl Default for HistoryWindow {
    fn default() -> Self {
        HistoryWindow::new(HistoryWindow::DEFAULT_CAPACITY)
    }
}

impl HistoryWindow {
    pub const DEFAULT_CAPACITY: usize = 1024;

    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        HistoryWindow {
            capacity,
            inter_arrival: Ring::new(capacity),
            exec_time: Ring::new(capacity),
            pushes: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Records one observation; the oldest sample is evicted when full.
    /// Negative inter-arrivals and non-positive execution times are clamped.
    pub fn push(&mut self, inter_arrival: f64, exec_time: f64) {
        self.push_inter_arrival(inter_arrival);
        self.push_exec(exec_time);
    }

    pub fn push_inter_arrival(&mut self, inter_arrival: f64) {
        self.inter_arrival.push(inter_arrival.max(0.0), self.capacity);
        self.pushes += 1;
    }

    pub fn push_exec(&mut self, exec_time: f64) {
        self.exec_time.push(exec_time.max(f64::MIN_POSITIVE), self.capacity);
        self.pushes += 1;
    }

    pub fn len(&self) -> usize {
        self.inter_arrival.values.len().max(self.exec_time.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of ring writes ever made; used for cache invalidation.
    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn inter_arrivals(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.inter_arrival.values.iter().copied()
    }

    pub fn exec_times(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.exec_time.values.iter().copied()
    }

    pub fn inter_arrival_samples(&self) -> Vec<f64> {
        self.inter_arrivals().collect()
    }

    pub fn stats(&self) -> Result<HistoryStats, DomainError> {
        let n_ia = self.inter_arrival.values.len();
        let n_ex = self.exec_time.values.len();
        if n_ia == 0 && n_ex == 0 {
            return Err(DomainError::EmptyWindow);
        }
        let mean_ia = if n_ia > 0 { self.inter_arrival.mean() } else { 0.0 };
        let mean_ex = if n_ex > 0 { self.exec_time.mean() } else { 0.0 };
        let var_ia = self.inter_arrival.variance();
        let var_ex = self.exec_time.variance();
        let cv_ex = if mean_ex > 0.0 { var_ex.sqrt() / mean_ex } else { 0.0 };
        Ok(HistoryStats {
            mean_ia,
            var_ia,
            mean_ex,
            var_ex,
            cv_ex,
            degenerate: n_ia < 2 || n_ex < 2,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitEntry {
    pub request_id: RequestId,
    pub function_id: String,
    pub enqueue_time: Millis,
    pub wait_deadline: Millis,
}

/// Live slots, running requests, the wait queue and per-function history.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SystemState {
    pub slots: BTreeMap<SlotId, Slot>,
    pub running: BTreeMap<RequestId, SlotId>,
    pub wait_queue: VecDeque<WaitEntry>,
    pub history: BTreeMap<String, HistoryWindow>,
    /// Provisioning slots created for a specific request.
    pub provisioning: BTreeMap<SlotId, RequestId>,
}

impl SystemState {
    pub fn new() -> Self {
        SystemState::default()
    }

    pub fn slots_of<'a>(&'a self, function_id: &'a str) -> impl Iterator<Item = &'a Slot> + 'a {
        self.slots.values().filter(move |s| s.function_id == function_id)
    }

    /// The idle slot of `function_id` that has been alive longest (ties by id).
    pub fn oldest_idle(&self, function_id: &str) -> Option<SlotId> {
        self.slots_of(function_id)
            .filter(|s| s.state == SlotState::Idle)
            .min_by_key(|s| (s.created_at, s.id))
            .map(|s| s.id)
    }

    pub fn live_count(&self, function_id: &str) -> usize {
        self.slots_of(function_id)
            .filter(|s| s.state.is_live() && !s.retire_on_complete)
            .count()
    }

    pub fn waiters_of<'a>(&'a self, function_id: &'a str) -> impl Iterator<Item = &'a WaitEntry> + 'a {
        self.wait_queue.iter().filter(move |w| w.function_id == function_id)
    }

    pub fn history_of(&self, function_id: &str) -> Option<&HistoryWindow> {
        self.history.get(function_id)
    }

    /// Inserts keeping the queue ordered by `(enqueue_time, request_id)`.
    pub fn enqueue(&mut self, entry: WaitEntry) {
        let key = (entry.enqueue_time, entry.request_id);
        let pos = self
            .wait_queue
            .iter()
            .rposition(|w| (w.enqueue_time, w.request_id) < key)
            .map_or(0, |p| p + 1);
        self.wait_queue.insert(pos, entry);
    }

    pub fn remove_waiter(&mut self, request_id: RequestId) -> Option<WaitEntry> {
        let pos = self.wait_queue.iter().position(|w| w.request_id == request_id)?;
        self.wait_queue.remove(pos)
    }

    /// Head of the FIFO queue for one function.
    pub fn pop_waiter(&mut self, function_id: &str) -> Option<WaitEntry> {
        let pos = self.wait_queue.iter().position(|w| w.function_id == function_id)?;
        self.wait_queue.remove(pos)
    }

    pub fn check_invariants(&self) -> Result<(), DomainError> {
        for (req, slot_id) in &self.running {
            match self.slots.get(slot_id) {
                Some(s) if matches!(s.state, SlotState::Busy | SlotState::Draining) && s.busy_since.is_some() => {}
                _ => {
                    return Err(DomainError::Invariant(format!(
                        "request {req} runs on slot {slot_id} which is not busy"
                    )))
                }
            }
            if self.wait_queue.iter().any(|w| w.request_id == *req) {
                return Err(DomainError::Invariant(format!("request {req} both running and waiting")));
            }
        }
        let ordered = self
            .wait_queue
            .iter()
            .zip(self.wait_queue.iter().skip(1))
            .all(|(a, b)| (a.enqueue_time, a.request_id) < (b.enqueue_time, b.request_id));
        if !ordered {
            return Err(DomainError::Invariant("wait queue out of order".into()));
        }
        Ok(())
    }
}

impl fmt::Display for SlotState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
