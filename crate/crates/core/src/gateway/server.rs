use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{Map, Value};

use super::protocol::{err_line, failure_line, ok_line, parse_line, WireRequest};
use super::sampler::TraceSampler;
use super::{GatewayConfig, GatewayError};
use crate::domain::{
    transition, HistoryWindow, LifecycleEvent, Millis, RequestId, RequestRecord, Slot, SlotId, SlotState, SystemState,
    WaitEntry,
};
use crate::metrics::{self, CostModel, Percentiles};
use crate::policy::{gc, Admission, Asrm, AsrmConfig, Policy, PolicyError, TickAction};

/// What a submission experienced, as reported back to the client.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmitOutcome {
    pub request_id: RequestId,
    pub correlation_id: String,
    pub admission: &'static str,
    pub slot: SlotId,
    pub cold_start: bool,
    pub wait_ms: Millis,
    pub latency_ms: Millis,
    pub sampled: bool,
}

/// A consistent snapshot of the live counters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatewayStats {
    pub policy: String,
    pub requests: u64,
    pub completed: u64,
    pub cold_starts: u64,
    pub rejected: u64,
    pub waiting: usize,
    pub live_slots: usize,
    pub mean_latency: Option<f64>,
    pub arl: Option<f64>,
    pub rue: Option<f64>,
    pub cost_total: f64,
    pub sampled: u64,
    pub percentiles: BTreeMap<String, Percentiles>,
}

struct Core {
    state: SystemState,
    policy: Asrm,
    next_request: RequestId,
    next_slot: SlotId,
    last_arrival: BTreeMap<String, Millis>,
    pending_gap: BTreeMap<RequestId, f64>,
    /// Slots handed to parked waiters, keyed by request.
    handoff: BTreeMap<RequestId, SlotId>,
    latencies: BTreeMap<String, Vec<f64>>,
    requests: u64,
    cold_starts: u64,
    rejected: u64,
    sampled: u64,
    busy_ms: f64,
    exec_cost: f64,
    /// Alive time and memory of slots already terminated.
    dead: Vec<(Millis, f64)>,
    sampler: TraceSampler,
    history_capacity: usize,
    cost: CostModel,
}

impl Core {
    fn bury(&mut self, slot: &Slot, now: Millis) {
        self.dead.push((slot.alive_time(now), slot.memory_gb));
    }

    fn provision(&mut self, function_id: &str, memory_gb: f64, bound: Option<RequestId>, now: Millis) -> SlotId {
        let id = self.next_slot;
        self.next_slot += 1;
        self.state.slots.insert(id, Slot::provisioning(id, function_id, memory_gb, now));
        if let Some(r) = bound {
            self.state.provisioning.insert(id, r);
        }
        id
    }

    fn apply(&mut self, slot: SlotId, event: LifecycleEvent, now: Millis) -> Result<(), GatewayError> {
        let s = self
            .state
            .slots
            .remove(&slot)
            .ok_or_else(|| GatewayError::Internal(format!("slot {slot} vanished")))?;
        let s = transition(s, event, now).map_err(|e| GatewayError::Internal(e.to_string()))?;
        if s.state == SlotState::Terminated {
            self.bury(&s, now);
        } else {
            self.state.slots.insert(slot, s);
        }
        Ok(())
    }

    /// Same hand-off rule as the simulator: head waiter first, else park Idle.
    fn slot_freed(&mut self, slot: SlotId, now: Millis) -> Result<bool, GatewayError> {
        let function_id = self.state.slots[&slot].function_id.clone();
        if let Some(w) = self.state.pop_waiter(&function_id) {
            self.apply(slot, LifecycleEvent::Start, now)?;
            self.handoff.insert(w.request_id, slot);
            return Ok(true);
        }
        let deadline = self.policy.idle_deadline(&self.state, slot, now).max(now);
        if let Some(s) = self.state.slots.get_mut(&slot) {
            s.idle_deadline = deadline;
        }
        Ok(false)
    }

    fn stats(&self, now: Millis) -> GatewayStats {
        let completed = self.latencies.values().map(Vec::len).sum::<usize>() as u64;
        let total: f64 = self.latencies.values().flatten().sum();
        let live: Vec<(Millis, f64)> = self
            .state
            .slots
            .values()
            .map(|s| (s.alive_time(now), s.memory_gb))
            .collect();
        let alive: f64 = self.dead.iter().chain(&live).map(|(a, _)| *a as f64).sum();
        let mem_cost: f64 = self
            .dead
            .iter()
            .chain(&live)
            .map(|(a, m)| self.cost.c_mem * m * self.cost.billed(*a) as f64)
            .sum();
        GatewayStats {
            policy: self.policy.name().to_string(),
            requests: self.requests,
            completed,
            cold_starts: self.cold_starts,
            rejected: self.rejected,
            waiting: self.state.wait_queue.len(),
            live_slots: self.state.slots.values().filter(|s| s.state.is_live()).count(),
            mean_latency: (completed > 0).then(|| total / completed as f64),
            arl: metrics::arl(&self.latencies).ok(),
            rue: (alive > 0.0).then(|| self.busy_ms / alive),
            cost_total: self.exec_cost + mem_cost,
            sampled: self.sampled,
            percentiles: self
                .latencies
                .iter()
                .filter_map(|(f, l)| metrics::percentiles(l).map(|p| (f.clone(), p)))
                .collect(),
        }
    }
}

struct Shared {
    core: Mutex<Core>,
    wake: Condvar,
    shutdown: AtomicBool,
    origin: Instant,
    cold_start: Duration,
    default_service_ms: Millis,
    tick: Duration,
}

impl Shared {
    fn now(&self) -> Millis {
        self.origin.elapsed().as_millis() as Millis
    }

    fn lock(&self) -> MutexGuard<'_, Core> {
        // A panicked connection thread must not take the gateway down.
        self.core.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn submit(
        &self,
        function_id: String,
        service_hint: Option<Millis>,
        memory_gb: f64,
        features: Vec<f64>,
    ) -> Result<SubmitOutcome, (String, String)> {
        let internal = |e: GatewayError| ("internal".to_string(), e.to_string());
        let service = service_hint.unwrap_or(self.default_service_ms);
        let mut core = self.lock();
        let now = self.now();
        let id = core.next_request;
        core.next_request += 1;
        core.requests += 1;
        let record = RequestRecord::new(id, function_id, now, service, memory_gb, features);
        if let Err(e) = record.validate() {
            core.rejected += 1;
            return Err(("bad_request".into(), e.to_string()));
        }
        if let Some(prev) = core.last_arrival.insert(record.function_id.clone(), now) {
            core.pending_gap.insert(id, (now - prev) as f64);
        }
        let c = &mut *core;
        let decision = match c.policy.admit(&c.state, &record.view(), now) {
            Ok(d) => d,
            Err(PolicyError::BreakerOpen(f)) => {
                core.rejected += 1;
                core.pending_gap.remove(&id);
                return Err(("breaker_open".into(), f));
            }
            Err(e) => return Err(("internal".into(), e.to_string())),
        };
        let mut cold = false;
        let mut wait_ms = 0;
        let label = match decision.admission {
            Admission::Reuse { .. } => "reuse",
            Admission::Wait { .. } => "wait",
            Admission::Create => "create",
        };
        let slot = match decision.admission {
            Admission::Reuse { slot } => {
                core.apply(slot, LifecycleEvent::Start, now).map_err(internal)?;
                slot
            }
            Admission::Wait { deadline } => {
                core.state.enqueue(WaitEntry {
                    request_id: id,
                    function_id: record.function_id.clone(),
                    enqueue_time: now,
                    wait_deadline: deadline,
                });
                loop {
                    if let Some(slot) = core.handoff.remove(&id) {
                        wait_ms = self.now() - now;
                        break slot;
                    }
                    let t = self.now();
                    if t >= deadline {
                        wait_ms = t - now;
                        core.state.remove_waiter(id);
                        cold = true;
                        let (c, slot) = self.cold_start(core, &record, t).map_err(internal)?;
                        core = c;
                        break slot;
                    }
                    core = self
                        .wake
                        .wait_timeout(core, Duration::from_millis(deadline - t))
                        .unwrap_or_else(|p| p.into_inner())
                        .0;
                }
            }
            Admission::Create => {
                cold = true;
                let (c, slot) = self.cold_start(core, &record, now).map_err(internal)?;
                core = c;
                slot
            }
        };
        if cold {
            core.cold_starts += 1;
        }
        let started = self.now();
        drop(core);

        thread::sleep(Duration::from_millis(service));

        let mut core = self.lock();
        let done = self.now();
        let draining = core.state.slots.get(&slot).is_some_and(|s| s.state == SlotState::Draining);
        let event = if draining { LifecycleEvent::Terminate } else { LifecycleEvent::Complete };
        core.apply(slot, event, done).map_err(internal)?;
        let capacity = core.history_capacity;
        let gap = core.pending_gap.remove(&id);
        let history = core
            .state
            .history
            .entry(record.function_id.clone())
            .or_insert_with(|| HistoryWindow::new(capacity));
        if let Some(g) = gap {
            history.push_inter_arrival(g);
        }
        history.push_exec(service as f64);
        let Core { policy, state, .. } = &mut *core;
        policy.on_complete(state, &record, slot, done);
        let latency = done - now;
        core.busy_ms += (done - started) as f64;
        core.exec_cost += core.cost.c_exec * service as f64;
        core.latencies
            .entry(record.function_id.clone())
            .or_default()
            .push(latency as f64);
        let sampled = core.sampler.sample_decision(&record.correlation_id, latency as f64, done);
        core.sampled += sampled as u64;
        if !draining && core.slot_freed(slot, done).map_err(internal)? {
            self.wake.notify_all();
        }
        Ok(SubmitOutcome {
            request_id: id,
            correlation_id: record.correlation_id,
            admission: label,
            slot,
            cold_start: cold,
            wait_ms,
            latency_ms: latency,
            sampled,
        })
    }

    /// Provisions a slot bound to `record`, sleeping through the cold start
    /// with the lock released.
    fn cold_start<'a>(
        &'a self,
        mut core: MutexGuard<'a, Core>,
        record: &RequestRecord,
        now: Millis,
    ) -> Result<(MutexGuard<'a, Core>, SlotId), GatewayError> {
        let scale = core.policy.cold_start_scale(&record.function_id, now).max(0.0);
        let slot = core.provision(&record.function_id, record.memory_gb, Some(record.id), now);
        drop(core);
        thread::sleep(self.cold_start.mul_f64(scale));
        let mut core = self.lock();
        let t = self.now();
        core.state.provisioning.remove(&slot);
        core.policy.on_provision_result(&record.function_id, true, t);
        core.apply(slot, LifecycleEvent::Start, t)?;
        Ok((core, slot))
    }

    /// Background warm-up for slots a policy provisions on its own.
    fn warm_later(self: &Arc<Self>, slot: SlotId, function_id: String) {
        let shared = Arc::clone(self);
        thread::spawn(move || {
            thread::sleep(shared.cold_start);
            let mut core = shared.lock();
            let t = shared.now();
            core.policy.on_provision_result(&function_id, true, t);
            if core.apply(slot, LifecycleEvent::Warmed, t).is_ok() && core.slot_freed(slot, t).unwrap_or(false) {
                shared.wake.notify_all();
            }
        });
    }

    fn tick(self: &Arc<Self>) {
        let mut core = self.lock();
        let now = self.now();
        if let Some(g) = core.policy.gc_granularity().filter(|&g| g > 0) {
            let boundary = now - now % g;
            if let Ok(dead) = gc::gc_sweep(&mut core.state, boundary, g) {
                for s in dead {
                    core.bury(&s, boundary);
                }
            }
        } else {
            let expired: Vec<SlotId> = gc::expired_idle(&core.state, now);
            for id in expired {
                if let Ok(s) = gc::retire(&mut core.state, id, now) {
                    core.bury(&s, now);
                }
            }
        }
        let Core { policy, state, .. } = &mut *core;
        let actions = policy.on_tick(state, now);
        for action in actions {
            match action {
                TickAction::Provision { function_id, memory_gb } => {
                    let slot = core.provision(&function_id, memory_gb, None, now);
                    self.warm_later(slot, function_id);
                }
                TickAction::Retire { slot } => {
                    if core.state.slots.get(&slot).is_some_and(|s| s.state == SlotState::Idle) {
                        if let Ok(s) = gc::retire(&mut core.state, slot, now) {
                            core.bury(&s, now);
                        }
                    }
                }
            }
        }
    }

    fn config_set(&self, patch: Map<String, Value>) -> Result<AsrmConfig, String> {
        let mut core = self.lock();
        let mut current = serde_json::to_value(core.policy.config()).map_err(|e| e.to_string())?;
        if let Value::Object(m) = &mut current {
            m.extend(patch);
        }
        let cfg: AsrmConfig = serde_json::from_value(current).map_err(|e| e.to_string())?;
        core.policy.set_config(cfg.clone()).map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn to_fields<T: Serialize>(v: &T) -> Map<String, Value> {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

/// A bound gateway; `run` serves until a client sends shutdown.
pub struct Gateway {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Gateway {
    pub fn bind(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        let policy = Asrm::new(cfg.asrm.clone()).map_err(|e| GatewayError::Config(e.to_string()))?;
        let listener = TcpListener::bind(&cfg.bind).map_err(|source| GatewayError::Bind {
            addr: cfg.bind.clone(),
            source,
        })?;
        let tick = cfg.asrm.billing_granularity.max(1);
        let cost = CostModel {
            billing_granularity: cfg.asrm.billing_granularity,
            ..CostModel::default()
        };
        let core = Core {
            state: SystemState::new(),
            policy,
            next_request: 1,
            next_slot: 1,
            last_arrival: BTreeMap::new(),
            pending_gap: BTreeMap::new(),
            handoff: BTreeMap::new(),
            latencies: BTreeMap::new(),
            requests: 0,
            cold_starts: 0,
            rejected: 0,
            sampled: 0,
            busy_ms: 0.0,
            exec_cost: 0.0,
            dead: Vec::new(),
            sampler: TraceSampler::new(cfg.sampler),
            history_capacity: cfg.history_capacity,
            cost,
        };
        Ok(Gateway {
            listener,
            shared: Arc::new(Shared {
                core: Mutex::new(core),
                wake: Condvar::new(),
                shutdown: AtomicBool::new(false),
                origin: Instant::now(),
                cold_start: Duration::from_millis(cfg.cold_start_ms),
                default_service_ms: cfg.default_service_ms,
                tick: Duration::from_millis(tick),
            }),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, GatewayError> {
        Ok(self.listener.local_addr()?)
    }

    pub fn run(self) -> Result<(), GatewayError> {
        let addr = self.local_addr()?;
        let ticker = {
            let shared = Arc::clone(&self.shared);
            thread::spawn(move || {
                while !shared.shutdown.load(Ordering::SeqCst) {
                    thread::sleep(shared.tick);
                    shared.tick();
                }
            })
        };
        for stream in self.listener.incoming() {
            if self.shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let shared = Arc::clone(&self.shared);
            thread::spawn(move || {
                let _ = handle_connection(&shared, stream, addr);
            });
        }
        let _ = ticker.join();
        Ok(())
    }
}

fn handle_connection(shared: &Arc<Shared>, stream: TcpStream, addr: SocketAddr) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            // Invalid UTF-8 still gets its one response.
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                writer.write_all(format!("{}\n", err_line(&Value::Null, "parse", None)).as_bytes())?;
                continue;
            }
            Err(e) => return Err(e),
        };
        if line.trim().is_empty() {
            continue;
        }
        let (req, parsed) = parse_line(&line);
        let mut stop = false;
        let response = match parsed {
            Err(f) => failure_line(&req, &f),
            Ok(WireRequest::Submit {
                function_id,
                service_hint_ms,
                memory_gb,
                features,
            }) => match shared.submit(function_id, service_hint_ms, memory_gb, features) {
                Ok(outcome) => ok_line(&req, to_fields(&outcome)),
                Err((code, detail)) => err_line(&req, &code, Some(&detail)),
            },
            Ok(WireRequest::Stats) => {
                let stats = shared.lock().stats(shared.now());
                ok_line(&req, to_fields(&stats))
            }
            Ok(WireRequest::ConfigGet) => {
                let cfg = shared.lock().policy.config().clone();
                let mut m = Map::new();
                m.insert("config".into(), serde_json::to_value(cfg).unwrap_or(Value::Null));
                ok_line(&req, m)
            }
            Ok(WireRequest::ConfigSet { config }) => match shared.config_set(config) {
                Ok(cfg) => {
                    let mut m = Map::new();
                    m.insert("config".into(), serde_json::to_value(cfg).unwrap_or(Value::Null));
                    ok_line(&req, m)
                }
                Err(e) => err_line(&req, "config", Some(&e)),
            },
            Ok(WireRequest::Shutdown) => {
                stop = true;
                ok_line(&req, Map::new())
            }
        };
        writer.write_all(format!("{response}\n").as_bytes())?;
        writer.flush()?;
        if stop {
            shared.shutdown.store(true, Ordering::SeqCst);
            // Unblock the accept loop.
            let _ = TcpStream::connect(addr);
            break;
        }
    }
    Ok(())
}
