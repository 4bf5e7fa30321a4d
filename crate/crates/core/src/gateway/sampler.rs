use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::Millis;
use crate::metrics::nearest_rank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub base_rate: f64,
    pub boosted_rate: f64,
    /// Completions kept for the rolling P99.
    pub latency_window: usize,
    /// The anomaly check needs at least this many completions.
    pub min_samples: usize,
    pub boost_window_ms: Millis,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            base_rate: 0.01,
            boosted_rate: 1.0,
            latency_window: 1000,
            min_samples: 100,
            boost_window_ms: 10_000,
        }
    }
}

/// Maps a correlation id to a fixed point of [0, 1).
pub fn trace_hash(correlation_id: &str) -> f64 {
    let digest = Sha256::digest(correlation_id.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    // 53 bits fill an f64 mantissa exactly.
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

/// Head sampling by correlation id with a temporary boost after a latency
/// above the rolling P99.
#[derive(Debug, Clone)]
pub struct TraceSampler {
    cfg: SamplerConfig,
    recent: VecDeque<f64>,
    boosted_until: Option<Millis>,
}

impl TraceSampler {
    pub fn new(cfg: SamplerConfig) -> Self {
        TraceSampler {
            cfg,
            recent: VecDeque::with_capacity(cfg.latency_window.min(4096)),
            boosted_until: None,
        }
    }

    pub fn rate(&self, now: Millis) -> f64 {
        match self.boosted_until {
            Some(t) if now < t => self.cfg.boosted_rate,
            _ => self.cfg.base_rate,
        }
    }

    fn rolling_p99(&self) -> Option<f64> {
        if self.recent.len() < self.cfg.min_samples.max(1) {
            return None;
        }
        let mut v: Vec<f64> = self.recent.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        Some(nearest_rank(&v, 0.99))
    }

    /// Whether to keep the trace of a request that just completed with
    /// `latency`.
    pub fn sample_decision(&mut self, correlation_id: &str, latency: f64, now: Millis) -> bool {
        if self.rolling_p99().is_some_and(|p99| latency > p99) {
            self.boosted_until = Some(now.saturating_add(self.cfg.boost_window_ms));
        }
        if self.cfg.latency_window > 0 {
            if self.recent.len() == self.cfg.latency_window {
                self.recent.pop_front();
            }
            self.recent.push_back(latency);
        }
        trace_hash(correlation_id) < self.rate(now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(rate: f64) -> TraceSampler {
        TraceSampler::new(SamplerConfig {
            base_rate: rate,
            boosted_rate: rate,
            ..SamplerConfig::default()
        })
    }

    #[test]
    fn extreme_rates() {
        let (mut all, mut none) = (fixed(1.0), fixed(0.0));
        for i in 0..1000 {
            let id = format!("fn-{i:08x}");
            assert!(all.sample_decision(&id, 10.0, i));
            assert!(!none.sample_decision(&id, 10.0, i));
        }
    }

    #[test]
    fn slow_completion_boosts() {
        let mut s = TraceSampler::new(SamplerConfig::default());
        for i in 0..200 {
            s.sample_decision(&format!("a{i}"), 10.0, i);
        }
        assert_eq!(s.rate(200), 0.01);
        s.sample_decision("slow", 500.0, 200);
        assert_eq!(s.rate(201), 1.0);
        assert_eq!(s.rate(10_199), 1.0);
        assert_eq!(s.rate(10_200), 0.01);
    }
}
