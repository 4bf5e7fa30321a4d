use std::collections::VecDeque;

use serde::Serialize;

use crate::domain::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BreakerState {
    Closed,
    Open { since: Millis, backoff_ms: Millis },
    /// One probe has been admitted and its outcome is pending.
    HalfOpen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakerConfig {
    pub window: usize,
    pub failure_threshold: f64,
    pub backoff_base: Millis,
    pub backoff_cap: Millis,
}

impl Default for BreakerConfig {
    fn default() -> Self {
        BreakerConfig {
            window: 100,
            failure_threshold: 0.5,
            backoff_base: 1000,
            backoff_cap: 60_000,
        }
    }
}

/// Admission guard over a sliding window of outcomes, with exponential
/// backoff between probes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircuitBreaker {
    cfg: BreakerConfig,
    state: BreakerState,
    /// `true` marks a failure.
    outcomes: VecDeque<bool>,
    consecutive_open_count: u32,
}

impl CircuitBreaker {
    pub fn new(cfg: BreakerConfig) -> Self {
        CircuitBreaker {
            cfg,
            state: BreakerState::Closed,
            outcomes: VecDeque::with_capacity(cfg.window),
            consecutive_open_count: 0,
        }
    }

    pub fn state(&self) -> BreakerState {
        self.state
    }

    pub fn consecutive_open_count(&self) -> u32 {
        self.consecutive_open_count
    }

    pub fn failure_rate(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.outcomes.iter().filter(|&&f| f).count() as f64 / self.outcomes.len() as f64
    }

    fn backoff(&self) -> Millis {
        let doublings = self.consecutive_open_count.saturating_sub(1).min(63);
        self.cfg
            .backoff_base
            .saturating_mul(1u64 << doublings)
            .min(self.cfg.backoff_cap)
    }

    fn open(&mut self, now: Millis) {
        self.consecutive_open_count += 1;
        self.outcomes.clear();
        self.state = BreakerState::Open {
            since: now,
            backoff_ms: self.backoff(),
        };
    }

    /// Whether a request may be admitted at `now`. An expired Open state
    /// admits exactly one probe and moves to HalfOpen.
    pub fn allow(&mut self, now: Millis) -> bool {
        match self.state {
            BreakerState::Closed => true,
            BreakerState::Open { since, backoff_ms } if now >= since.saturating_add(backoff_ms) => {
                self.state = BreakerState::HalfOpen;
                true
            }
            BreakerState::Open { .. } | BreakerState::HalfOpen => false,
        }
    }

    pub fn on_result(&mut self, success: bool, now: Millis) {
        match self.state {
            BreakerState::Closed => {
                if self.outcomes.len() == self.cfg.window {
                    self.outcomes.pop_front();
                }
                self.outcomes.push_back(!success);
                if self.outcomes.len() == self.cfg.window && self.failure_rate() > self.cfg.failure_threshold {
                    self.open(now);
                }
            }
            BreakerState::HalfOpen => {
                if success {
                    self.consecutive_open_count = 0;
                    self.outcomes.clear();
                    self.state = BreakerState::Closed;
                } else {
                    self.open(now);
                }
            }
            // Late outcomes of requests admitted before opening.
            BreakerState::Open { .. } => {}
        }
    }
}
