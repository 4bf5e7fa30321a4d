use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::domain::Millis;

/// Tunable parameters of the adaptive manager. Serialized flat, one key per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsrmConfig {
    /// Inter-arrival quantile used as the idle duration.
    pub idle_quantile: f64,
    pub idle_min: Millis,
    pub idle_max: Millis,
    /// Wait when the wait probability reaches this value.
    pub wait_threshold: f64,
    pub timeout_base: Millis,
    pub timeout_cv_gain: f64,
    pub hazard_mode: HazardMode,
    pub learning_rate: f64,
    pub breaker_window: usize,
    pub breaker_failure_threshold: f64,
    pub backoff_base: Millis,
    pub backoff_cap: Millis,
    pub billing_granularity: Millis,
    /// Upper edges (ms) of the execution-time classes; `n` edges give `n + 1` classes.
    pub class_edges: Vec<f64>,
    /// Rebuild the cached density after this many history pushes.
    pub kde_refresh_every: u64,
    /// Cold-start latency the admission path assumes for a provisioning slot.
    pub cold_start_estimate: Millis,
    /// Release a function's last slot early and provision it again just before
    /// the next arrival is expected.
    pub prewarm: bool,
    /// Inter-arrival quantile at which a released slot is provisioned again.
    pub prewarm_quantile: f64,
    /// Minimum gap between release and re-provisioning that makes a release worthwhile.
    pub prewarm_min_lead: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardMode {
    FromForecast,
}

impl Default for AsrmConfig {
    fn default() -> Self {
        AsrmConfig {
            idle_quantile: 0.95,
            idle_min: 1000,
            idle_max: 600_000,
            wait_threshold: 0.5,
            timeout_base: 1000,
            timeout_cv_gain: 1.0,
            hazard_mode: HazardMode::FromForecast,
            learning_rate: 0.01,
            breaker_window: 100,
            breaker_failure_threshold: 0.5,
            backoff_base: 1000,
            backoff_cap: 60_000,
            billing_granularity: 100,
            class_edges: vec![50.0, 500.0],
            kde_refresh_every: 32,
            cold_start_estimate: 500,
            prewarm: false,
            prewarm_quantile: 0.01,
            prewarm_min_lead: 2000,
        }
    }
}

impl AsrmConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |what: &str| Err(PolicyError::InvalidConfig(what.to_string()));
        if !(self.idle_quantile > 0.0 && self.idle_quantile < 1.0) {
            return bad("idle_quantile must lie in (0, 1)");
        }
        if self.idle_min > self.idle_max {
            return bad("idle_min must not exceed idle_max");
        }
        if !(self.wait_threshold > 0.0 && self.wait_threshold < 1.0) {
            return bad("wait_threshold must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(self.timeout_cv_gain >= 0.0) || !self.timeout_cv_gain.is_finite() {
            return bad("timeout_cv_gain must be non-negative");
        }
        if self.breaker_window == 0 {
            return bad("breaker_window must be positive");
        }
        if !(0.0..=1.0).contains(&self.breaker_failure_threshold) {
            return bad("breaker_failure_threshold must lie in [0, 1]");
        }
        if self.backoff_base == 0 || self.backoff_cap < self.backoff_base {
            return bad("need 0 < backoff_base <= backoff_cap");
        }
        if self.billing_granularity == 0 {
            return bad("billing_granularity must be positive");
        }
        if self.class_edges.windows(2).any(|w| !(w[0] < w[1])) || self.class_edges.iter().any(|e| !e.is_finite()) {
            return bad("class_edges must be finite and strictly increasing");
        }
        if self.kde_refresh_every == 0 {
            return bad("kde_refresh_every must be positive");
        }
        if !(self.prewarm_quantile > 0.0 && self.prewarm_quantile < 1.0) {
            return bad("prewarm_quantile must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Parameters of the four reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub keepalive_ms: Millis,
    pub snapshot_cold_scale: f64,
    pub zygote_pool: usize,
    pub zygote_warm_fraction: f64,
    pub zygote_memory_gb: f64,
    pub autoscaler_target: f64,
    pub autoscaler_window_ms: Millis,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            keepalive_ms: 60_000,
            snapshot_cold_scale: 0.3,
            zygote_pool: 2,
            zygote_warm_fraction: 0.3,
            zygote_memory_gb: 0.5,
            autoscaler_target: 0.7,
            autoscaler_window_ms: 60_000,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |what: &str| Err(PolicyError::InvalidConfig(what.to_string()));
        if !(self.snapshot_cold_scale >= 0.0) {
            return bad("snapshot_cold_scale must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.zygote_warm_fraction) {
            return bad("zygote_warm_fraction must lie in [0, 1]");
        }
        if !(self.zygote_memory_gb >= 0.0) {
            return bad("zygote_memory_gb must be non-negative");
        }
        if !(self.autoscaler_target > 0.0) {
            return bad("autoscaler_target must be positive");
        }
        if self.autoscaler_window_ms == 0 {
            return bad("autoscaler_window_ms must be positive");
        }
        Ok(())
    }
}
