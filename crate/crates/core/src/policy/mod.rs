//! Admission, keep-alive and cleanup decisions. [`Asrm`] is the adaptive
//! manager; the baselines are simplified reference policies that share the
//! same [`Policy`] interface.

mod asrm;
mod baselines;
pub mod breaker;
pub mod checkpoint;
pub mod classifier;
mod config;
pub mod gc;
pub mod wait;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Millis, RequestId, RequestRecord, RequestView, SlotId, SystemState};

pub use asrm::{adaptive_idle_duration, Asrm};
pub use baselines::{ConcurrencyAutoscaler, FixedKeepalive, SnapshotStart, ZygoteCache};
pub use breaker::{BreakerConfig, BreakerState, CircuitBreaker};
pub use checkpoint::{checkpoint_apply, AsyncCheckpointer, CheckpointState, Delta};
pub use classifier::{ClassPrediction, OnlineClassifier};
pub use config::{AsrmConfig, BaselineConfig, HazardMode};
pub use gc::gc_sweep;
pub use wait::{adaptive_timeout, competitor_probability, wait_probability};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("circuit breaker open for function {0}")]
    BreakerOpen(String),
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Admission {
    Reuse { slot: SlotId },
    Wait { deadline: Millis },
    Create,
}

/// Inputs behind a wait-or-create choice, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    #[serde(deserialize_with = "infinite_if_null")]
    pub p_wait: f64,
    #[serde(deserialize_with = "infinite_if_null")]
    pub t_star: f64,
    #[serde(deserialize_with = "infinite_if_null")]
    pub hazard: f64,
    /// Time at which the survival term was evaluated: the expected wait.
    /// Infinite when no slot can free up.
    #[serde(deserialize_with = "infinite_if_null")]
    pub t_eval: f64,
    pub competitors: Vec<f64>,
}

/// JSON has no infinity; serde_json writes it as `null`.
fn infinite_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitDecision {
    pub admission: Admission,
    pub rationale: Option<Rationale>,
}

impl WaitDecision {
    pub fn reuse(slot: SlotId) -> Self {
        WaitDecision { admission: Admission::Reuse { slot }, rationale: None }
    }

    pub fn create() -> Self {
        WaitDecision { admission: Admission::Create, rationale: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TickAction {
    /// Start an unassigned slot that becomes Idle when ready.
    Provision { function_id: String, memory_gb: f64 },
    /// Drain and terminate an Idle slot.
    Retire { slot: SlotId },
}

/// Resources held outside regular slots, billed like a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandbyInterval {
    pub start: Millis,
    pub end: Millis,
    pub memory_gb: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub standby: Vec<StandbyInterval>,
    /// `(predicted, actual)` idle survival times in ms.
    pub survival_pairs: Vec<(f64, f64)>,
}

/// The decision interface the simulator and the gateway drive.
pub trait Policy: Send {
    fn name(&self) -> &str;

    /// Called once per arriving request.
    fn admit(&mut self, state: &SystemState, req: &RequestView<'_>, now: Millis) -> Result<WaitDecision, PolicyError>;

    /// Multiplier on the cold-start latency of a slot created for `function_id` now.
    fn cold_start_scale(&mut self, _function_id: &str, _now: Millis) -> f64 {
        1.0
    }

    /// Absolute deadline for a slot that just became Idle. `Millis::MAX` keeps it.
    fn idle_deadline(&mut self, state: &SystemState, slot: SlotId, now: Millis) -> Millis;

    /// `Some(g)`: expired slots are collected only at multiples of `g`.
    /// `None`: each slot is collected exactly at its deadline.
    fn gc_granularity(&self) -> Option<Millis> {
        None
    }

    fn on_complete(&mut self, _state: &SystemState, _req: &RequestRecord, _slot: SlotId, _now: Millis) {}

    fn on_provision_result(&mut self, _function_id: &str, _success: bool, _now: Millis) {}

    fn on_tick(&mut self, _state: &SystemState, _now: Millis) -> Vec<TickAction> {
        Vec::new()
    }

    fn finish(&mut self, _now: Millis) -> PolicySummary {
        PolicySummary::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Asrm,
    ConcurrencyAutoscaler,
    FixedKeepalive,
    SnapshotStart,
    ZygoteCache,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Asrm,
        PolicyKind::ConcurrencyAutoscaler,
        PolicyKind::FixedKeepalive,
        PolicyKind::SnapshotStart,
        PolicyKind::ZygoteCache,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Asrm => "asrm",
            PolicyKind::ConcurrencyAutoscaler => "concurrency_autoscaler",
            PolicyKind::FixedKeepalive => "fixed_keepalive",
            PolicyKind::SnapshotStart => "snapshot_start",
            PolicyKind::ZygoteCache => "zygote_cache",
        }
    }

    pub fn build(self, asrm: &AsrmConfig, baseline: &BaselineConfig, cold_start_base: Millis) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(match self {
            PolicyKind::Asrm => Box::new(Asrm::new(asrm.clone())?),
            PolicyKind::FixedKeepalive => {
                baseline.validate()?;
                Box::new(FixedKeepalive::new(baseline.keepalive_ms))
            }
            PolicyKind::SnapshotStart => {
                baseline.validate()?;
                Box::new(SnapshotStart::new(baseline.keepalive_ms, baseline.snapshot_cold_scale))
            }
            PolicyKind::ZygoteCache => {
                baseline.validate()?;
                Box::new(ZygoteCache::new(
                    baseline.zygote_pool,
                    baseline.zygote_warm_fraction,
                    baseline.keepalive_ms,
                    cold_start_base,
                    baseline.zygote_memory_gb,
                ))
            }
            PolicyKind::ConcurrencyAutoscaler => {
                baseline.validate()?;
                Box::new(ConcurrencyAutoscaler::new(baseline.autoscaler_target, baseline.autoscaler_window_ms))
            }
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PolicyError::UnknownPolicy(s.to_string()))
    }
}

/// Pending `(idle_start, predicted)` survival predictions, resolved by the next arrival.
#[derive(Debug, Clone, Default)]
pub(crate) struct SurvivalLedger {
    pending: std::collections::BTreeMap<String, Vec<(Millis, f64)>>,
    pairs: Vec<(f64, f64)>,
}

impl SurvivalLedger {
    pub(crate) fn predict(&mut self, function_id: &str, idle_start: Millis, predicted: f64) {
        self.pending
            .entry(function_id.to_string())
            .or_default()
            .push((idle_start, predicted.max(1.0)));
    }

    pub(crate) fn arrival(&mut self, function_id: &str, now: Millis) {
        if let Some(list) = self.pending.get_mut(function_id) {
            for (start, predicted) in list.drain(..) {
                self.pairs.push((predicted, (now.saturating_sub(start) as f64).max(1.0)));
            }
        }
    }

    pub(crate) fn take_pairs(&mut self) -> Vec<(f64, f64)> {
        std::mem::take(&mut self.pairs)
    }
}

pub(crate) type PredictedExec = std::collections::BTreeMap<RequestId, f64>;
