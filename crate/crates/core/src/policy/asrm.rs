use std::collections::BTreeMap;

use super::wait::{adaptive_timeout, competitor_probability, wait_deadline, wait_probability};
use super::{
    Admission, AsrmConfig, BreakerConfig, CircuitBreaker, OnlineClassifier, Policy, PolicyError, PolicySummary,
    PredictedExec, Rationale, SurvivalLedger, TickAction, WaitDecision,
};
use crate::domain::{HistoryWindow, Millis, RequestRecord, RequestView, SlotId, SlotState, SystemState};
use crate::predictor::{forecast_from_grid, KdeGrid, KdeModel};

/// `clamp(Q_q(inter-arrival density), idle_min, idle_max)`; `idle_min` without history.
pub fn adaptive_idle_duration(history: Option<&HistoryWindow>, cfg: &AsrmConfig) -> Millis {
    IdleModel::build(history, cfg).idle_ms
}

/// Idle duration and density grid derived from one history snapshot.
#[derive(Debug, Clone)]
struct IdleModel {
    built_at: u64,
    idle_ms: Millis,
    grid: Option<KdeGrid>,
}

impl IdleModel {
    fn build(history: Option<&HistoryWindow>, cfg: &AsrmConfig) -> IdleModel {
        let samples = history.map(|h| h.inter_arrival_samples()).unwrap_or_default();
        let built_at = history.map_or(0, |h| h.pushes());
        let Ok(model) = KdeModel::with_silverman(samples) else {
            return IdleModel { built_at, idle_ms: cfg.idle_min, grid: None };
        };
        let grid = KdeGrid::build(&model);
        let q = grid.quantile(cfg.idle_quantile).unwrap_or(0.0).max(0.0);
        let idle_ms = (q.round() as Millis).clamp(cfg.idle_min, cfg.idle_max);
        IdleModel { built_at, idle_ms, grid: Some(grid) }
    }
}

#[derive(Debug, Clone, Default)]
struct FunctionState {
    last_arrival: Option<Millis>,
    memory_gb: f64,
    idle: Option<IdleModel>,
    classifier: Option<OnlineClassifier>,
    /// Planned re-provisioning time after an early release.
    prewarm_at: Option<Millis>,
    /// When the released slot went idle; anchors the retention horizon.
    released_at: Option<Millis>,
}

/// The adaptive manager: density-driven idle durations, probabilistic
/// waiting for busy slots, per-function execution-time classifiers and
/// circuit breakers, with expired slots collected on billing boundaries.
#[derive(Debug, Clone)]
pub struct Asrm {
    cfg: AsrmConfig,
    functions: BTreeMap<String, FunctionState>,
    breakers: BTreeMap<String, CircuitBreaker>,
    predicted: PredictedExec,
    survival: SurvivalLedger,
}

impl Asrm {
    pub fn new(cfg: AsrmConfig) -> Result<Self, PolicyError> {
        cfg.validate()?;
        Ok(Asrm {
            cfg,
            functions: BTreeMap::new(),
            breakers: BTreeMap::new(),
            predicted: PredictedExec::new(),
            survival: SurvivalLedger::default(),
        })
    }

    pub fn config(&self) -> &AsrmConfig {
        &self.cfg
    }

    /// Replaces the tunable parameters; learned state is kept.
    pub fn set_config(&mut self, cfg: AsrmConfig) -> Result<(), PolicyError> {
        cfg.validate()?;
        let refresh = cfg.idle_quantile != self.cfg.idle_quantile
            || cfg.idle_min != self.cfg.idle_min
            || cfg.idle_max != self.cfg.idle_max;
        self.cfg = cfg;
        if refresh {
            self.functions.values_mut().for_each(|f| f.idle = None);
        }
        Ok(())
    }

    fn breaker_config(&self) -> BreakerConfig {
        BreakerConfig {
            window: self.cfg.breaker_window,
            failure_threshold: self.cfg.breaker_failure_threshold,
            backoff_base: self.cfg.backoff_base,
            backoff_cap: self.cfg.backoff_cap,
        }
    }

    fn idle_model(&mut self, state: &SystemState, function_id: &str) -> &IdleModel {
        let history = state.history_of(function_id);
        let pushes = history.map_or(0, |h| h.pushes());
        let cfg = &self.cfg;
        let fs = self.functions.entry(function_id.to_string()).or_default();
        let stale = match &fs.idle {
            None => true,
            Some(m) => m.grid.is_none() && pushes > m.built_at || pushes >= m.built_at + cfg.kde_refresh_every,
        };
        if stale {
            fs.idle = Some(IdleModel::build(history, cfg));
        }
        fs.idle.as_ref().expect("idle model just built")
    }

    /// Idle duration currently applied to `function_id`.
    pub fn current_idle_duration(&mut self, state: &SystemState, function_id: &str) -> Millis {
        self.idle_model(state, function_id).idle_ms
    }

    /// Expected execution time of a request that has not completed yet.
    pub fn predict_exec(&self, state: &SystemState, req: &RequestView<'_>) -> f64 {
        self.functions
            .get(req.function_id)
            .and_then(|f| f.classifier.as_ref())
            .and_then(|c| c.predict(req.features).expected_exec_ms)
            .or_else(|| {
                state
                    .history_of(req.function_id)
                    .and_then(|h| h.stats().ok())
                    .filter(|s| s.mean_ex > 0.0)
                    .map(|s| s.mean_ex)
            })
            .unwrap_or(self.cfg.timeout_base as f64)
    }

    /// Wait-or-create evaluation for a request that found no idle slot.
    pub fn evaluate_wait(&self, state: &SystemState, function_id: &str, now: Millis) -> (Admission, Rationale) {
        let t_star = adaptive_timeout(state.history_of(function_id), &self.cfg);
        let fallback = self.cfg.timeout_base as f64;
        let predicted = |rid| self.predicted.get(&rid).copied().unwrap_or(fallback);
        let mut soonest = f64::INFINITY;
        for (&rid, &sid) in &state.running {
            let Some(slot) = state.slots.get(&sid) else { continue };
            if slot.function_id != function_id || slot.state != SlotState::Busy || slot.retire_on_complete {
                continue;
            }
            let elapsed = now.saturating_sub(slot.busy_since.unwrap_or(now)) as f64;
            soonest = soonest.min((predicted(rid) - elapsed).max(1.0));
        }
        let cold = self.cfg.cold_start_estimate as f64;
        for slot in state.slots_of(function_id).filter(|s| s.state == SlotState::Provisioning) {
            let elapsed = now.saturating_sub(slot.created_at) as f64;
            let ready = (cold - elapsed).max(1.0);
            let rem = match state.provisioning.get(&slot.id) {
                Some(&rid) => ready + predicted(rid),
                None => ready,
            };
            soonest = soonest.min(rem);
        }
        let competitors: Vec<f64> = if soonest.is_finite() {
            state
                .waiters_of(function_id)
                .map(|w| competitor_probability(soonest, predicted(w.request_id)))
                .collect()
        } else {
            Vec::new()
        };
        let hazard = 1.0 / t_star.max(f64::MIN_POSITIVE);
        let p_wait = if soonest.is_finite() {
            wait_probability(hazard, soonest, &competitors).unwrap_or(0.0)
        } else {
            0.0
        };
        let admission = if p_wait >= self.cfg.wait_threshold {
            Admission::Wait { deadline: wait_deadline(now, t_star) }
        } else {
            Admission::Create
        };
        let rationale = Rationale {
            p_wait,
            t_star,
            hazard,
            t_eval: soonest,
            competitors,
        };
        (admission, rationale)
    }
}

impl Policy for Asrm {
    fn name(&self) -> &str {
        "asrm"
    }

    fn admit(&mut self, state: &SystemState, req: &RequestView<'_>, now: Millis) -> Result<WaitDecision, PolicyError> {
        self.survival.arrival(req.function_id, now);
        {
            let fs = self.functions.entry(req.function_id.to_string()).or_default();
            fs.last_arrival = Some(now);
            fs.memory_gb = req.memory_gb;
            fs.prewarm_at = None;
            fs.released_at = None;
        }
        let cfg = self.breaker_config();
        let breaker = self
            .breakers
            .entry(req.function_id.to_string())
            .or_insert_with(|| CircuitBreaker::new(cfg));
        if !breaker.allow(now) {
            return Err(PolicyError::BreakerOpen(req.function_id.to_string()));
        }
        let exec = self.predict_exec(state, req);
        self.predicted.insert(req.id, exec);
        if let Some(slot) = state.oldest_idle(req.function_id) {
            return Ok(WaitDecision::reuse(slot));
        }
        let (admission, rationale) = self.evaluate_wait(state, req.function_id, now);
        Ok(WaitDecision { admission, rationale: Some(rationale) })
    }

    fn idle_deadline(&mut self, state: &SystemState, slot: SlotId, now: Millis) -> Millis {
        let Some(function_id) = state.slots.get(&slot).map(|s| s.function_id.clone()) else {
            return now;
        };
        let prewarm = self.cfg.prewarm;
        let (q_lo, cold, min_lead) = (self.cfg.prewarm_quantile, self.cfg.cold_start_estimate, self.cfg.prewarm_min_lead);
        let model = self.idle_model(state, &function_id).clone();
        let fs = self.functions.entry(function_id.clone()).or_default();
        let last = fs.last_arrival.unwrap_or(now);
        let elapsed = now.saturating_sub(last) as f64;
        if let Some(grid) = &model.grid {
            let forecast = forecast_from_grid(grid, elapsed, now as f64);
            self.survival.predict(&function_id, now, forecast.remaining());
        }
        let mut deadline = now.saturating_add(model.idle_ms);
        if let Some(released) = fs.released_at {
            // A re-provisioned slot keeps the horizon of the slot it replaced.
            deadline = released.saturating_add(model.idle_ms).max(now + 1);
        } else if prewarm && state.live_count(&function_id) == 1 {
            if let Some(grid) = &model.grid {
                let expected_gap = grid.quantile(q_lo).unwrap_or(0.0).max(0.0).round() as Millis;
                let provision_at = (last + expected_gap).saturating_sub(cold);
                if provision_at >= now + min_lead && provision_at < deadline {
                    fs.prewarm_at = Some(provision_at);
                    fs.released_at = Some(now);
                    deadline = now;
                }
            }
        }
        deadline
    }

    fn gc_granularity(&self) -> Option<Millis> {
        Some(self.cfg.billing_granularity)
    }

    fn on_complete(&mut self, _state: &SystemState, req: &RequestRecord, _slot: SlotId, _now: Millis) {
        self.predicted.remove(&req.id);
        let (edges, lr) = (self.cfg.class_edges.clone(), self.cfg.learning_rate);
        let fs = self.functions.entry(req.function_id.clone()).or_default();
        let clf = fs
            .classifier
            .get_or_insert_with(|| OnlineClassifier::with_edges(&edges, req.features.len(), lr));
        clf.observe(&req.features, req.service_time as f64);
    }

    fn on_provision_result(&mut self, function_id: &str, success: bool, now: Millis) {
        let cfg = self.breaker_config();
        self.breakers
            .entry(function_id.to_string())
            .or_insert_with(|| CircuitBreaker::new(cfg))
            .on_result(success, now);
    }

    fn on_tick(&mut self, state: &SystemState, now: Millis) -> Vec<TickAction> {
        let mut actions = Vec::new();
        for (function_id, fs) in &mut self.functions {
            if fs.prewarm_at.is_some_and(|t| t <= now) {
                fs.prewarm_at = None;
                if state.live_count(function_id) == 0 {
                    actions.push(TickAction::Provision {
                        function_id: function_id.clone(),
                        memory_gb: fs.memory_gb,
                    });
                } else {
                    fs.released_at = None;
                }
            }
        }
        actions
    }

    fn finish(&mut self, _now: Millis) -> PolicySummary {
        PolicySummary {
            standby: Vec::new(),
            survival_pairs: self.survival.take_pairs(),
        }
    }
}
