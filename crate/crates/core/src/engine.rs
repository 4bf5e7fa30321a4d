//! Deterministic discrete-event simulation of slots, requests and a policy.
//!
//! Events fire in `(time, seq)` order. All randomness comes from one seeded
//! ChaCha stream and all maps are ordered, so a run is a pure function of
//! its trace, policy parameters and configuration.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{
    transition, DomainError, LifecycleEvent, Millis, RequestId, RequestRecord, Slot, SlotId, SlotState, SystemState,
    WaitEntry,
};
use crate::policy::{
    checkpoint, gc, Admission, AsyncCheckpointer, CheckpointState, Delta, Policy, PolicyError, Rationale,
    StandbyInterval, TickAction,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("trace is not sorted by arrival time at request {0}")]
    TraceUnsorted(RequestId),
    #[error("duplicate request id {0}")]
    DuplicateRequest(RequestId),
    #[error("policy fault: {0}")]
    PolicyFault(String),
    #[error("slot {0} was already terminated")]
    NoSuchSlot(SlotId),
    #[error("event at {event} scheduled before the clock at {clock}")]
    TimeTravel { event: Millis, clock: Millis },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub cold_start_base: Millis,
    /// Sigma of the lognormal multiplier on cold starts; 0 disables jitter.
    pub cold_start_jitter: f64,
    pub seed: u64,
    pub gc_tick: Millis,
    /// Arrivals after this time are not injected.
    pub run_until: Option<Millis>,
    pub provision_failure_prob: f64,
    pub checkpoint_flush_latency: Millis,
    pub history_capacity: usize,
    /// Check state invariants after every event.
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cold_start_base: 500,
            cold_start_jitter: 0.25,
            seed: 0,
            gc_tick: 100,
            run_until: None,
            provision_failure_prob: 0.0,
            checkpoint_flush_latency: 50,
            history_capacity: 1024,
            check_invariants: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if self.cold_start_base == 0 {
            return bad("cold_start_base must be positive");
        }
        if self.gc_tick == 0 {
            return bad("gc_tick must be positive");
        }
        if !(self.cold_start_jitter >= 0.0) || !self.cold_start_jitter.is_finite() {
            return bad("cold_start_jitter must be non-negative");
        }
        if !(0.0..1.0).contains(&self.provision_failure_prob) {
            return bad("provision_failure_prob must lie in [0, 1)");
        }
        if self.history_capacity == 0 {
            return bad("history_capacity must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    RequestArrival { index: usize },
    ProvisionComplete { slot: SlotId },
    RequestComplete { request: RequestId, slot: SlotId },
    IdleExpiry { slot: SlotId },
    WaitDeadline { request: RequestId },
    CheckpointFlush { batch: u64 },
    GcSweepTick,
}

impl EventKind {
    fn encode(&self) -> [u64; 3] {
        match *self {
            EventKind::RequestArrival { index } => [0, index as u64, 0],
            EventKind::ProvisionComplete { slot } => [1, slot, 0],
            EventKind::RequestComplete { request, slot } => [2, request, slot],
            EventKind::IdleExpiry { slot } => [3, slot, 0],
            EventKind::WaitDeadline { request } => [4, request, 0],
            EventKind::CheckpointFlush { batch } => [5, batch, 0],
            EventKind::GcSweepTick => [6, 0, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: Millis,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue of events with a clock. Equal times fire in scheduling order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
    clock: Millis,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue::default()
    }

    pub fn clock(&self) -> Millis {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: Millis, kind: EventKind) -> Result<SimEvent, EngineError> {
        if time < self.clock {
            return Err(EngineError::TimeTravel { event: time, clock: self.clock });
        }
        let ev = SimEvent { time, seq: self.next_seq, kind };
        self.next_seq += 1;
        self.heap.push(Reverse(ev));
        Ok(ev)
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<SimEvent> {
        let Reverse(ev) = self.heap.pop()?;
        self.clock = ev.time;
        Some(ev)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub id: RequestId,
    pub function_id: String,
    pub arrival: Millis,
    pub service_time: Millis,
    pub start: Option<Millis>,
    pub completion: Option<Millis>,
    pub cold_start: bool,
    /// Time spent in the wait queue.
    pub wait_ms: Millis,
    pub rejected: bool,
    pub slot: Option<SlotId>,
}

impl RequestOutcome {
    /// Arrival to completion, for completed requests.
    pub fn latency(&self) -> Option<Millis> {
        self.completion.map(|c| c - self.arrival)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub id: SlotId,
    pub function_id: String,
    pub memory_gb: f64,
    pub created_at: Millis,
    pub provision_done_at: Option<Millis>,
    pub terminated_at: Millis,
    pub busy_time: Millis,
    pub busy_intervals: Vec<(Millis, Millis)>,
}

impl SlotRecord {
    pub fn alive_time(&self) -> Millis {
        self.terminated_at - self.created_at
    }

    fn from_slot(s: Slot) -> Self {
        SlotRecord {
            terminated_at: s.terminated_at.unwrap_or(s.last_used_at),
            id: s.id,
            function_id: s.function_id,
            memory_gb: s.memory_gb,
            created_at: s.created_at,
            provision_done_at: s.provision_done_at,
            busy_time: s.busy_time_accum,
            busy_intervals: s.busy_intervals,
        }
    }

    /// Billed stand-in for resources a policy holds outside regular slots.
    pub fn from_standby(id: SlotId, s: &StandbyInterval) -> Self {
        SlotRecord {
            id,
            function_id: String::new(),
            memory_gb: s.memory_gb,
            created_at: s.start,
            provision_done_at: Some(s.start),
            terminated_at: s.end,
            busy_time: 0,
            busy_intervals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub request_id: RequestId,
    pub time: Millis,
    pub admission: Admission,
    pub rationale: Option<Rationale>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub requests: Vec<RequestOutcome>,
    pub slots: Vec<SlotRecord>,
    pub decisions: Vec<DecisionRecord>,
    /// `(predicted, actual)` idle survival times recorded by the policy.
    pub survival_pairs: Vec<(f64, f64)>,
    pub checkpoint: CheckpointState,
    /// The committed checkpoint equals the in-order fold of every recorded delta.
    pub checkpoint_consistent: bool,
    /// Hex SHA-256 over the fired event sequence.
    pub digest: String,
    pub events: u64,
    pub end_time: Millis,
}

impl SimReport {
    pub fn cold_starts(&self) -> usize {
        self.requests.iter().filter(|r| r.cold_start).count()
    }

    pub fn completed(&self) -> usize {
        self.requests.iter().filter(|r| r.completion.is_some()).count()
    }

    pub fn rejected(&self) -> usize {
        self.requests.iter().filter(|r| r.rejected).count()
    }
}

/// Runs `trace` against `policy` to completion.
pub fn run(trace: &[RequestRecord], policy: &mut dyn Policy, config: &SimConfig) -> Result<SimReport, EngineError> {
    Simulation::new(trace, policy, config)?.run()
}

struct Simulation<'a> {
    trace: Vec<&'a RequestRecord>,
    index: BTreeMap<RequestId, usize>,
    policy: &'a mut dyn Policy,
    cfg: &'a SimConfig,
    queue: EventQueue,
    state: SystemState,
    rng: ChaCha8Rng,
    jitter: Option<LogNormal<f64>>,
    next_arrival: usize,
    next_slot: SlotId,
    last_arrival: BTreeMap<String, Millis>,
    inter_arrival: BTreeMap<RequestId, f64>,
    outcomes: Vec<RequestOutcome>,
    finished_slots: Vec<SlotRecord>,
    terminated: BTreeSet<SlotId>,
    decisions: Vec<DecisionRecord>,
    checkpoint: AsyncCheckpointer,
    hasher: Sha256,
    events: u64,
    ticking: bool,
}

impl<'a> Simulation<'a> {
    fn new(trace: &'a [RequestRecord], policy: &'a mut dyn Policy, cfg: &'a SimConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let mut index = BTreeMap::new();
        let mut kept = Vec::new();
        let mut prev = 0;
        for r in trace {
            if r.arrival_time < prev {
                return Err(EngineError::TraceUnsorted(r.id));
            }
            prev = r.arrival_time;
            r.validate()?;
            if cfg.run_until.is_some_and(|u| r.arrival_time > u) {
                break;
            }
            if index.insert(r.id, kept.len()).is_some() {
                return Err(EngineError::DuplicateRequest(r.id));
            }
            kept.push(r);
        }
        let outcomes = kept
            .iter()
            .map(|r| RequestOutcome {
                id: r.id,
                function_id: r.function_id.clone(),
                arrival: r.arrival_time,
                service_time: r.service_time,
                start: None,
                completion: None,
                cold_start: false,
                wait_ms: 0,
                rejected: false,
                slot: None,
            })
            .collect();
        let jitter = if cfg.cold_start_jitter > 0.0 {
            Some(LogNormal::new(0.0, cfg.cold_start_jitter).map_err(|e| EngineError::InvalidConfig(e.to_string()))?)
        } else {
            None
        };
        Ok(Simulation {
            trace: kept,
            index,
            policy,
            cfg,
            queue: EventQueue::new(),
            state: SystemState::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            jitter,
            next_arrival: 0,
            next_slot: 1,
            last_arrival: BTreeMap::new(),
            inter_arrival: BTreeMap::new(),
            outcomes,
            finished_slots: Vec::new(),
            terminated: BTreeSet::new(),
            decisions: Vec::new(),
            checkpoint: AsyncCheckpointer::new(),
            hasher: Sha256::new(),
            events: 0,
            ticking: false,
        })
    }

    fn run(mut self) -> Result<SimReport, EngineError> {
        if let Some(first) = self.trace.first() {
            let t = first.arrival_time;
            self.queue.schedule(t, EventKind::RequestArrival { index: 0 })?;
            self.queue.schedule(gc::next_boundary(t, self.cfg.gc_tick), EventKind::GcSweepTick)?;
            self.ticking = true;
        }
        while let Some(ev) = self.queue.pop() {
            self.record(&ev);
            self.dispatch(ev)?;
            if self.cfg.check_invariants {
                self.state.check_invariants()?;
            }
        }
        self.finish()
    }

    fn record(&mut self, ev: &SimEvent) {
        self.events += 1;
        self.hasher.update(ev.time.to_le_bytes());
        self.hasher.update(ev.seq.to_le_bytes());
        for word in ev.kind.encode() {
            self.hasher.update(word.to_le_bytes());
        }
    }

    fn dispatch(&mut self, ev: SimEvent) -> Result<(), EngineError> {
        let now = ev.time;
        match ev.kind {
            EventKind::RequestArrival { index } => self.on_arrival(index, now),
            EventKind::ProvisionComplete { slot } => self.on_provisioned(slot, now),
            EventKind::RequestComplete { request, slot } => self.on_complete(request, slot, now),
            EventKind::IdleExpiry { slot } => {
                let expired = self
                    .state
                    .slots
                    .get(&slot)
                    .is_some_and(|s| s.state == SlotState::Idle && s.idle_deadline <= now);
                if expired {
                    self.retire(slot, now)?;
                }
                Ok(())
            }
            EventKind::WaitDeadline { request } => {
                if self.state.remove_waiter(request).is_some() {
                    let i = self.index[&request];
                    let rec = self.trace[i];
                    self.outcomes[i].wait_ms = now - rec.arrival_time;
                    self.outcomes[i].cold_start = true;
                    self.provision(&rec.function_id.clone(), rec.memory_gb, Some(request), now)?;
                }
                Ok(())
            }
            EventKind::CheckpointFlush { batch } => {
                self.checkpoint.complete_flush(batch);
                Ok(())
            }
            EventKind::GcSweepTick => self.on_tick(now),
        }
    }

    fn on_arrival(&mut self, i: usize, now: Millis) -> Result<(), EngineError> {
        let rec = self.trace[i];
        if i + 1 < self.trace.len() {
            self.queue
                .schedule(self.trace[i + 1].arrival_time, EventKind::RequestArrival { index: i + 1 })?;
        }
        self.next_arrival = i + 1;
        if let Some(prev) = self.last_arrival.insert(rec.function_id.clone(), now) {
            self.inter_arrival.insert(rec.id, (now - prev) as f64);
        }
        let decision = match self.policy.admit(&self.state, &rec.view(), now) {
            Ok(d) => d,
            Err(PolicyError::BreakerOpen(_)) => {
                self.outcomes[i].rejected = true;
                return Ok(());
            }
            Err(e) => return Err(EngineError::PolicyFault(e.to_string())),
        };
        self.decisions.push(DecisionRecord {
            request_id: rec.id,
            time: now,
            admission: decision.admission,
            rationale: decision.rationale,
        });
        match decision.admission {
            Admission::Reuse { slot } => {
                match self.state.slots.get(&slot) {
                    None if self.terminated.contains(&slot) => return Err(EngineError::NoSuchSlot(slot)),
                    None => return Err(EngineError::PolicyFault(format!("reuse of unknown slot {slot}"))),
                    Some(s) if s.state != SlotState::Idle || s.function_id != rec.function_id => {
                        return Err(EngineError::PolicyFault(format!("reuse of slot {slot} in state {}", s.state)))
                    }
                    Some(_) => {}
                }
                self.start(rec.id, slot, now)
            }
            Admission::Wait { deadline } => {
                if deadline <= now {
                    return Err(EngineError::PolicyFault(format!("wait deadline {deadline} not after {now}")));
                }
                self.state.enqueue(WaitEntry {
                    request_id: rec.id,
                    function_id: rec.function_id.clone(),
                    enqueue_time: now,
                    wait_deadline: deadline,
                });
                self.queue.schedule(deadline, EventKind::WaitDeadline { request: rec.id })?;
                Ok(())
            }
            Admission::Create => {
                self.outcomes[i].cold_start = true;
                self.provision(&rec.function_id.clone(), rec.memory_gb, Some(rec.id), now)
            }
        }
    }

    fn cold_start_duration(&mut self, function_id: &str, now: Millis) -> Millis {
        let scale = self.policy.cold_start_scale(function_id, now).max(0.0);
        let jitter = self.jitter.map_or(1.0, |d| d.sample(&mut self.rng));
        (self.cfg.cold_start_base as f64 * scale * jitter).round() as Millis
    }

    fn provision(&mut self, function_id: &str, memory_gb: f64, bound: Option<RequestId>, now: Millis) -> Result<(), EngineError> {
        let id = self.next_slot;
        self.next_slot += 1;
        let duration = self.cold_start_duration(function_id, now);
        self.state.slots.insert(id, Slot::provisioning(id, function_id, memory_gb, now));
        if let Some(rid) = bound {
            self.state.provisioning.insert(id, rid);
        }
        self.queue.schedule(now + duration, EventKind::ProvisionComplete { slot: id })?;
        Ok(())
    }

    fn on_provisioned(&mut self, id: SlotId, now: Millis) -> Result<(), EngineError> {
        let bound = self.state.provisioning.remove(&id);
        let failed = self.cfg.provision_failure_prob > 0.0 && self.rng.random_bool(self.cfg.provision_failure_prob);
        let slot = self
            .state
            .slots
            .remove(&id)
            .ok_or_else(|| EngineError::PolicyFault(format!("provisioned slot {id} vanished")))?;
        let function_id = slot.function_id.clone();
        let memory_gb = slot.memory_gb;
        if failed {
            let dead = transition(slot, LifecycleEvent::ProvisionFailed, now)?;
            self.bury(dead);
            self.policy.on_provision_result(&function_id, false, now);
            if let Some(rid) = bound {
                self.provision(&function_id, memory_gb, Some(rid), now)?;
            }
            return Ok(());
        }
        self.policy.on_provision_result(&function_id, true, now);
        match bound {
            Some(rid) => {
                let slot = transition(slot, LifecycleEvent::Start, now)?;
                self.state.slots.insert(id, slot);
                self.begin_service(rid, id, now)
            }
            None => {
                let slot = transition(slot, LifecycleEvent::Warmed, now)?;
                self.state.slots.insert(id, slot);
                self.slot_freed(id, now)
            }
        }
    }

    /// Moves an Idle slot to Busy for `request`.
    fn start(&mut self, request: RequestId, slot: SlotId, now: Millis) -> Result<(), EngineError> {
        let s = self.state.slots.remove(&slot).expect("slot checked by caller");
        let s = transition(s, LifecycleEvent::Start, now)?;
        self.state.slots.insert(slot, s);
        self.begin_service(request, slot, now)
    }

    fn begin_service(&mut self, request: RequestId, slot: SlotId, now: Millis) -> Result<(), EngineError> {
        let i = self.index[&request];
        self.outcomes[i].start = Some(now);
        self.outcomes[i].slot = Some(slot);
        self.state.running.insert(request, slot);
        self.queue
            .schedule(now + self.trace[i].service_time, EventKind::RequestComplete { request, slot })?;
        Ok(())
    }

    fn on_complete(&mut self, request: RequestId, slot: SlotId, now: Millis) -> Result<(), EngineError> {
        let i = self.index[&request];
        let rec = self.trace[i];
        self.state.running.remove(&request);
        self.outcomes[i].completion = Some(now);
        let s = self
            .state
            .slots
            .remove(&slot)
            .ok_or_else(|| EngineError::PolicyFault(format!("completion on missing slot {slot}")))?;
        let draining = s.state == SlotState::Draining;
        let event = if draining { LifecycleEvent::Terminate } else { LifecycleEvent::Complete };
        let s = transition(s, event, now)?;
        let capacity = self.cfg.history_capacity;
        let history = self
            .state
            .history
            .entry(rec.function_id.clone())
            .or_insert_with(|| crate::domain::HistoryWindow::new(capacity));
        if let Some(ia) = self.inter_arrival.remove(&request) {
            history.push_inter_arrival(ia);
        }
        history.push_exec(rec.service_time as f64);
        let mut delta = Delta::new();
        delta.add(format!("{}/completed", rec.function_id), 1);
        delta.add(format!("{}/cold", rec.function_id), self.outcomes[i].cold_start as i64);
        delta.add(format!("{}/busy_ms", rec.function_id), rec.service_time as i64);
        self.checkpoint.record(delta);
        if draining {
            self.bury(s);
            self.policy.on_complete(&self.state, rec, slot, now);
            return Ok(());
        }
        self.state.slots.insert(slot, s);
        self.policy.on_complete(&self.state, rec, slot, now);
        self.slot_freed(slot, now)
    }

    /// Hands a free slot to the head waiter, or parks it Idle with a deadline.
    fn slot_freed(&mut self, slot: SlotId, now: Millis) -> Result<(), EngineError> {
        let function_id = self.state.slots[&slot].function_id.clone();
        if let Some(w) = self.state.pop_waiter(&function_id) {
            let i = self.index[&w.request_id];
            self.outcomes[i].wait_ms = now - self.trace[i].arrival_time;
            return self.start(w.request_id, slot, now);
        }
        let deadline = self.policy.idle_deadline(&self.state, slot, now).max(now);
        if let Some(s) = self.state.slots.get_mut(&slot) {
            s.idle_deadline = deadline;
        }
        if self.policy.gc_granularity().is_none() && deadline != Millis::MAX {
            self.queue.schedule(deadline, EventKind::IdleExpiry { slot })?;
        }
        Ok(())
    }

    fn retire(&mut self, slot: SlotId, now: Millis) -> Result<(), EngineError> {
        let dead = gc::retire(&mut self.state, slot, now)?;
        self.bury(dead);
        Ok(())
    }

    fn bury(&mut self, slot: Slot) {
        self.terminated.insert(slot.id);
        self.finished_slots.push(SlotRecord::from_slot(slot));
    }

    fn active(&self) -> bool {
        self.next_arrival < self.trace.len()
            || !self.state.wait_queue.is_empty()
            || self.state.slots.values().any(|s| s.state != SlotState::Idle)
    }

    fn on_tick(&mut self, now: Millis) -> Result<(), EngineError> {
        if let Some(g) = self.policy.gc_granularity() {
            if g > 0 && now % g == 0 {
                for dead in gc::gc_sweep(&mut self.state, now, g)? {
                    self.bury(dead);
                }
            }
        }
        for action in self.policy.on_tick(&self.state, now) {
            match action {
                TickAction::Provision { function_id, memory_gb } => {
                    self.provision(&function_id, memory_gb.max(f64::MIN_POSITIVE), None, now)?
                }
                TickAction::Retire { slot } => match self.state.slots.get(&slot) {
                    Some(s) if s.state == SlotState::Idle => self.retire(slot, now)?,
                    _ => return Err(EngineError::PolicyFault(format!("retire of non-idle slot {slot}"))),
                },
            }
        }
        if let Some(batch) = self.checkpoint.begin_flush() {
            self.queue
                .schedule(now + self.cfg.checkpoint_flush_latency, EventKind::CheckpointFlush { batch })?;
        }
        if self.active() {
            self.queue.schedule(now + self.cfg.gc_tick, EventKind::GcSweepTick)?;
        } else {
            // Drain complete: collect everything that is left.
            let idle: Vec<SlotId> = self.state.slots.keys().copied().collect();
            for slot in idle {
                self.retire(slot, now)?;
            }
            self.ticking = false;
        }
        Ok(())
    }

    fn finish(self) -> Result<SimReport, EngineError> {
        debug_assert!(!self.ticking);
        let end_time = self.queue.clock();
        let summary = self.policy.finish(end_time);
        let mut slots = self.finished_slots;
        let mut next = self.next_slot;
        for s in &summary.standby {
            slots.push(SlotRecord::from_standby(next, s));
            next += 1;
        }
        slots.sort_by_key(|s| s.id);
        let checkpoint_consistent = self.checkpoint.committed() == &checkpoint::fold(self.checkpoint.log());
        let digest = self
            .hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>();
        Ok(SimReport {
            policy: self.policy.name().to_string(),
            requests: self.outcomes,
            slots,
            decisions: self.decisions,
            survival_pairs: summary.survival_pairs,
            checkpoint: self.checkpoint.committed().clone(),
            checkpoint_consistent: checkpoint_consistent && !self.checkpoint.has_unflushed(),
            digest,
            events: self.events,
            end_time,
        })
    }
}
