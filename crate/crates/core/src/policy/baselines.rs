use std::collections::{BTreeMap, VecDeque};

use super::{Policy, PolicyError, PolicySummary, StandbyInterval, TickAction, WaitDecision};
use crate::domain::{Millis, RequestView, SlotId, SlotState, SystemState};

fn reuse_or_create(state: &SystemState, req: &RequestView<'_>) -> WaitDecision {
    match state.oldest_idle(req.function_id) {
        Some(slot) => WaitDecision::reuse(slot),
        None => WaitDecision::create(),
    }
}

/// Static keep-alive: reuse an idle slot, otherwise create; idle slots live `d` ms.
#[derive(Debug, Clone)]
pub struct FixedKeepalive {
    keepalive: Millis,
}

impl FixedKeepalive {
    pub fn new(keepalive: Millis) -> Self {
        FixedKeepalive { keepalive }
    }
}

impl Policy for FixedKeepalive {
    fn name(&self) -> &str {
        "fixed_keepalive"
    }

    fn admit(&mut self, state: &SystemState, req: &RequestView<'_>, _now: Millis) -> Result<WaitDecision, PolicyError> {
        Ok(reuse_or_create(state, req))
    }

    fn idle_deadline(&mut self, _state: &SystemState, _slot: SlotId, now: Millis) -> Millis {
        now.saturating_add(self.keepalive)
    }
}

/// Fixed keep-alive with cheaper cold starts restored from a snapshot.
#[derive(Debug, Clone)]
pub struct SnapshotStart {
    inner: FixedKeepalive,
    cold_scale: f64,
}

impl SnapshotStart {
    pub fn new(keepalive: Millis, cold_scale: f64) -> Self {
        SnapshotStart {
            inner: FixedKeepalive::new(keepalive),
            cold_scale,
        }
    }
}

impl Policy for SnapshotStart {
    fn name(&self) -> &str {
        "snapshot_start"
    }

    fn admit(&mut self, state: &SystemState, req: &RequestView<'_>, now: Millis) -> Result<WaitDecision, PolicyError> {
        self.inner.admit(state, req, now)
    }

    fn cold_start_scale(&mut self, _function_id: &str, _now: Millis) -> f64 {
        self.cold_scale
    }

    fn idle_deadline(&mut self, state: &SystemState, slot: SlotId, now: Millis) -> Millis {
        self.inner.idle_deadline(state, slot, now)
    }
}

/// Fixed keep-alive plus a pool of pre-initialised generic environments
/// ("zygotes"). A cold start that finds a ready zygote costs only
/// `warm_fraction` of the full latency; the pool member is then rebuilt,
/// which takes a full cold start. Pool members are billed while alive.
#[derive(Debug, Clone)]
pub struct ZygoteCache {
    inner: FixedKeepalive,
    warm_fraction: f64,
    refill_ms: Millis,
    memory_gb: f64,
    /// Time each pool member becomes ready.
    ready_at: Vec<Millis>,
    started: Option<Millis>,
}

impl ZygoteCache {
    pub fn new(pool: usize, warm_fraction: f64, keepalive: Millis, refill_ms: Millis, memory_gb: f64) -> Self {
        ZygoteCache {
            inner: FixedKeepalive::new(keepalive),
            warm_fraction,
            refill_ms,
            memory_gb,
            ready_at: vec![0; pool],
            started: None,
        }
    }
}

impl Policy for ZygoteCache {
    fn name(&self) -> &str {
        "zygote_cache"
    }

    fn admit(&mut self, state: &SystemState, req: &RequestView<'_>, now: Millis) -> Result<WaitDecision, PolicyError> {
        if self.started.is_none() {
            // The pool is built before traffic starts.
            self.started = Some(now);
            self.ready_at.iter_mut().for_each(|r| *r = now);
        }
        self.inner.admit(state, req, now)
    }

    fn cold_start_scale(&mut self, _function_id: &str, now: Millis) -> f64 {
        let ready = self
            .ready_at
            .iter_mut()
            .enumerate()
            .filter(|(_, r)| **r <= now)
            .min_by_key(|(i, r)| (**r, *i))
            .map(|(_, r)| r);
        match ready {
            Some(r) => {
                *r = now + self.refill_ms;
                self.warm_fraction
            }
            None => 1.0,
        }
    }

    fn idle_deadline(&mut self, state: &SystemState, slot: SlotId, now: Millis) -> Millis {
        self.inner.idle_deadline(state, slot, now)
    }

    fn finish(&mut self, now: Millis) -> PolicySummary {
        let standby = match self.started {
            Some(start) if now > start && self.memory_gb > 0.0 => self
                .ready_at
                .iter()
                .map(|_| StandbyInterval {
                    start,
                    end: now,
                    memory_gb: self.memory_gb,
                })
                .collect(),
            _ => Vec::new(),
        };
        PolicySummary {
            standby,
            survival_pairs: Vec::new(),
        }
    }
}

/// Keeps `ceil(mean concurrency over the window / target)` slots per function.
#[derive(Debug, Clone)]
pub struct ConcurrencyAutoscaler {
    target: f64,
    window: Millis,
    samples: BTreeMap<String, FunctionSamples>,
}

#[derive(Debug, Clone, Default)]
struct FunctionSamples {
    window: VecDeque<(Millis, usize)>,
    sum: usize,
    memory_gb: f64,
}

impl ConcurrencyAutoscaler {
    pub fn new(target: f64, window: Millis) -> Self {
        ConcurrencyAutoscaler {
            target,
            window,
            samples: BTreeMap::new(),
        }
    }

    /// Slot count the autoscaler steers toward for a mean concurrency.
    pub fn desired(&self, mean_concurrency: f64) -> usize {
        desired_slots(mean_concurrency, self.target)
    }
}

fn desired_slots(mean_concurrency: f64, target: f64) -> usize {
    // The small offset keeps exact ratios like 1.0 / 1.0 from rounding up.
    (mean_concurrency / target - 1e-9).ceil().max(0.0) as usize
}

impl Policy for ConcurrencyAutoscaler {
    fn name(&self) -> &str {
        "concurrency_autoscaler"
    }

    fn admit(&mut self, state: &SystemState, req: &RequestView<'_>, _now: Millis) -> Result<WaitDecision, PolicyError> {
        self.samples.entry(req.function_id.to_string()).or_default().memory_gb = req.memory_gb;
        Ok(reuse_or_create(state, req))
    }

    fn idle_deadline(&mut self, _state: &SystemState, _slot: SlotId, _now: Millis) -> Millis {
        Millis::MAX
    }

    fn on_tick(&mut self, state: &SystemState, now: Millis) -> Vec<TickAction> {
        let mut actions = Vec::new();
        let mut busy: BTreeMap<&str, usize> = BTreeMap::new();
        for slot in state.slots.values() {
            if slot.state == SlotState::Busy {
                *busy.entry(slot.function_id.as_str()).or_default() += 1;
            }
        }
        let (target, span) = (self.target, self.window);
        for (function_id, fs) in &mut self.samples {
            let c = busy.get(function_id.as_str()).copied().unwrap_or(0);
            fs.window.push_back((now, c));
            fs.sum += c;
            while fs.window.front().is_some_and(|&(t, _)| t + span <= now) {
                let (_, old) = fs.window.pop_front().unwrap_or_default();
                fs.sum -= old;
            }
            let mean = fs.sum as f64 / fs.window.len() as f64;
            let desired = desired_slots(mean, target);
            let live = state.live_count(function_id);
            if desired > live {
                for _ in live..desired {
                    actions.push(TickAction::Provision {
                        function_id: function_id.clone(),
                        memory_gb: fs.memory_gb,
                    });
                }
            } else if desired < live {
                let mut idle: Vec<_> = state
                    .slots_of(function_id)
                    .filter(|s| s.state == SlotState::Idle)
                    .map(|s| (s.created_at, s.id))
                    .collect();
                // Youngest first.
                idle.sort_unstable_by(|a, b| b.cmp(a));
                for (_, id) in idle.into_iter().take(live - desired) {
                    actions.push(TickAction::Retire { slot: id });
                }
            }
        }
        actions
    }
}
