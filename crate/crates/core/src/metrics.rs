//! Cost model and evaluation metrics over completed simulation reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Millis;
use crate::engine::SimReport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("report has requests that started but never completed")]
    IncompleteReport,
    #[error("baseline has no cold starts but the candidate has {0}")]
    BaselineZeroColds(usize),
    #[error("reports cover different traces")]
    TraceMismatch,
    #[error("no slot was ever alive")]
    ZeroAllocation,
    #[error("latency pattern {0:?} has no samples")]
    EmptyPattern(String),
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("predictions and actuals differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("survival times must be positive")]
    NonPositiveTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Currency per ms of execution.
    pub c_exec: f64,
    /// Currency per GB-ms of allocated memory.
    pub c_mem: f64,
    /// Alive time is rounded up to a multiple of this.
    pub billing_granularity: Millis,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            c_exec: 5.0e-9,
            c_mem: 4.2e-9,
            billing_granularity: 100,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.c_exec >= 0.0 && self.c_mem >= 0.0) || !self.c_exec.is_finite() || !self.c_mem.is_finite() {
            return Err(MetricsError::Domain("cost coefficients must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn billed(&self, alive: Millis) -> Millis {
        if self.billing_granularity <= 1 {
            alive
        } else {
            alive.div_ceil(self.billing_granularity) * self.billing_granularity
        }
    }
}

fn check_complete(report: &SimReport) -> Result<(), MetricsError> {
    if report.requests.iter().any(|r| r.start.is_some() && r.completion.is_none()) {
        return Err(MetricsError::IncompleteReport);
    }
    Ok(())
}

/// Execution cost of every completed request plus memory cost of every slot's billed alive time.
pub fn cost_total(report: &SimReport, model: &CostModel) -> Result<f64, MetricsError> {
    check_complete(report)?;
    let exec: f64 = report
        .requests
        .iter()
        .filter(|r| r.completion.is_some())
        .map(|r| model.c_exec * r.service_time as f64)
        .sum();
    let mem: f64 = report
        .slots
        .iter()
        .map(|s| model.c_mem * s.memory_gb * model.billed(s.alive_time()) as f64)
        .sum();
    Ok(exec + mem)
}

/// `1 - colds(opt) / colds(base)`.
pub fn csrr(opt: &SimReport, base: &SimReport) -> Result<f64, MetricsError> {
    let same = opt.requests.len() == base.requests.len()
        && opt.requests.iter().zip(&base.requests).all(|(a, b)| a.id == b.id);
    if !same {
        return Err(MetricsError::TraceMismatch);
    }
    cold_reduction(opt.cold_starts(), base.cold_starts())
}

pub fn cold_reduction(cold_opt: usize, cold_base: usize) -> Result<f64, MetricsError> {
    match (cold_opt, cold_base) {
        (0, 0) => Ok(0.0),
        (n, 0) => Err(MetricsError::BaselineZeroColds(n)),
        (o, b) => Ok(1.0 - o as f64 / b as f64),
    }
}

/// Executed time over total slot alive time; zero-length slots are skipped.
pub fn rue(report: &SimReport) -> Result<f64, MetricsError> {
    check_complete(report)?;
    let exec: f64 = report
        .requests
        .iter()
        .filter(|r| r.completion.is_some())
        .map(|r| r.service_time as f64)
        .sum();
    let alive: f64 = report
        .slots
        .iter()
        .map(|s| s.alive_time())
        .filter(|&a| a > 0)
        .map(|a| a as f64)
        .sum();
    if alive == 0.0 {
        return Err(MetricsError::ZeroAllocation);
    }
    Ok(exec / alive)
}

/// The `ceil(q * n)`-th smallest value (1-based) of `sorted`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    // The small offset keeps products like 0.95 * 100 from rounding up a rank.
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
}

pub fn percentiles(latencies: &[f64]) -> Option<Percentiles> {
    if latencies.is_empty() {
        return None;
    }
    let mut v = latencies.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Percentiles {
        p50: nearest_rank(&v, 0.50),
        p95: nearest_rank(&v, 0.95),
    })
}

/// Mean over patterns of `(P95 - P50) / P50`.
pub fn arl(latencies_by_pattern: &BTreeMap<String, Vec<f64>>) -> Result<f64, MetricsError> {
    if latencies_by_pattern.is_empty() {
        return Err(MetricsError::EmptyPattern(String::new()));
    }
    let mut total = 0.0;
    for (pattern, lat) in latencies_by_pattern {
        let p = percentiles(lat).ok_or_else(|| MetricsError::EmptyPattern(pattern.clone()))?;
        if !(p.p50 > 0.0) {
            return Err(MetricsError::Domain(format!("median latency of {pattern:?} must be positive")));
        }
        total += (p.p95 - p.p50) / p.p50;
    }
    Ok(total / latencies_by_pattern.len() as f64)
}

/// `(L_base / L_opt) / (C_opt / C_base)`.
pub fn cpi(l_base: f64, l_opt: f64, c_base: f64, c_opt: f64) -> Result<f64, MetricsError> {
    if [l_base, l_opt, c_base, c_opt].iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(MetricsError::Domain("latencies and costs must be positive".into()));
    }
    Ok((l_base / l_opt) / (c_opt / c_base))
}

/// `1 - mean(|pred - act| / max(pred, act))`.
pub fn pas(predictions: &[f64], actuals: &[f64]) -> Result<f64, MetricsError> {
    if predictions.len() != actuals.len() || predictions.is_empty() {
        return Err(MetricsError::LengthMismatch(predictions.len(), actuals.len()));
    }
    let mut err = 0.0;
    for (&p, &a) in predictions.iter().zip(actuals) {
        if !(p > 0.0 && a > 0.0) || !p.is_finite() || !a.is_finite() {
            return Err(MetricsError::NonPositiveTime);
        }
        err += (p - a).abs() / p.max(a);
    }
    Ok(1.0 - err / predictions.len() as f64)
}

/// Completed-request latencies grouped by function.
pub fn latencies_by_function(report: &SimReport) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &report.requests {
        if let Some(l) = r.latency() {
            out.entry(r.function_id.clone()).or_default().push(l as f64);
        }
    }
    out
}

pub fn mean_latency(report: &SimReport) -> Option<f64> {
    let l: Vec<f64> = report.requests.iter().filter_map(|r| r.latency()).map(|l| l as f64).collect();
    (!l.is_empty()).then(|| l.iter().sum::<f64>() / l.len() as f64)
}

fn overlap(a: (Millis, Millis), b: (Millis, Millis)) -> Millis {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// For each tick `t` (multiples of `tick` up to the report end), the cost of
/// execution and alive time falling inside `[t - window, t)`. Overlaps are not
/// rounded to the billing grid.
pub fn sliding_cost(report: &SimReport, model: &CostModel, window_ms: Millis, tick: Millis) -> Vec<(Millis, f64)> {
    let tick = tick.max(1);
    let mut out = Vec::new();
    let mut t = tick;
    let end = report.end_time.div_ceil(tick) * tick;
    let runs: Vec<(Millis, Millis)> = report
        .requests
        .iter()
        .filter_map(|r| Some((r.start?, r.completion?)))
        .collect();
    while t <= end {
        let w = (t.saturating_sub(window_ms), t);
        let exec: f64 = runs.iter().map(|&r| overlap(r, w) as f64 * model.c_exec).sum();
        let mem: f64 = report
            .slots
            .iter()
            .map(|s| overlap((s.created_at, s.terminated_at), w) as f64 * s.memory_gb * model.c_mem)
            .sum();
        out.push((t, exec + mem));
        t += tick;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub csrr: f64,
    pub rue: f64,
    pub arl: f64,
    pub cpi: f64,
    /// Absent when the policy made no survival predictions.
    pub pas: Option<f64>,
    pub cost_total: f64,
    pub mean_latency: f64,
    pub cold_starts: usize,
    pub requests: usize,
    pub rejected: usize,
    pub percentiles: BTreeMap<String, Percentiles>,
}

/// Every metric of `report`, with CSRR and CPI taken relative to `baseline`.
pub fn evaluate(report: &SimReport, baseline: &SimReport, model: &CostModel) -> Result<MetricsReport, MetricsError> {
    let cost = cost_total(report, model)?;
    let base_cost = cost_total(baseline, model)?;
    let latency = mean_latency(report).ok_or(MetricsError::EmptyPattern(String::new()))?;
    let base_latency = mean_latency(baseline).ok_or(MetricsError::EmptyPattern(String::new()))?;
    let by_fn = latencies_by_function(report);
    let pas = if report.survival_pairs.is_empty() {
        None
    } else {
        let (p, a): (Vec<f64>, Vec<f64>) = report.survival_pairs.iter().copied().unzip();
        Some(pas(&p, &a)?)
    };
    Ok(MetricsReport {
        policy: report.policy.clone(),
        csrr: csrr(report, baseline)?,
        rue: rue(report)?,
        arl: arl(&by_fn)?,
        cpi: cpi(base_latency, latency, base_cost, cost)?,
        pas,
        cost_total: cost,
        mean_latency: latency,
        cold_starts: report.cold_starts(),
        requests: report.requests.len(),
        rejected: report.rejected(),
        percentiles: by_fn
            .iter()
            .filter_map(|(k, v)| Some((k.clone(), percentiles(v)?)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RequestOutcome, SlotRecord};
    use crate::policy::CheckpointState;

    fn request(id: u64, cold: bool, start: Millis, service: Millis) -> RequestOutcome {
        RequestOutcome {
            id,
            function_id: "f".into(),
            arrival: start,
            service_time: service,
            start: Some(start),
            completion: Some(start + service),
            cold_start: cold,
            wait_ms: 0,
            rejected: false,
            slot: Some(1),
        }
    }

    fn slot(id: u64, alive: (Millis, Millis), busy: Millis, mem: f64) -> SlotRecord {
        SlotRecord {
            id,
            function_id: "f".into(),
            memory_gb: mem,
            created_at: alive.0,
            provision_done_at: Some(alive.0),
            terminated_at: alive.1,
            busy_time: busy,
            busy_intervals: vec![],
        }
    }

    fn report(requests: Vec<RequestOutcome>, slots: Vec<SlotRecord>) -> SimReport {
        SimReport {
            policy: "t".into(),
            requests,
            slots,
            decisions: vec![],
            survival_pairs: vec![],
            checkpoint: CheckpointState::default(),
            checkpoint_consistent: true,
            digest: String::new(),
            events: 0,
            end_time: 100,
        }
    }

    #[test]
    fn cost_example() {
        let r = report(vec![request(1, true, 0, 2)], vec![slot(1, (0, 10), 2, 1.0)]);
        let m = CostModel { c_exec: 1.0, c_mem: 0.1, billing_granularity: 1 };
        assert!((cost_total(&r, &m).unwrap() - 3.0).abs() < 1e-12);
        let zero = CostModel { c_exec: 0.0, c_mem: 0.0, billing_granularity: 1 };
        assert_eq!(cost_total(&r, &zero).unwrap(), 0.0);
        assert_eq!(cost_total(&report(vec![], vec![]), &m).unwrap(), 0.0);
    }

    #[test]
    fn billing_rounds_up() {
        let m = CostModel { c_exec: 0.0, c_mem: 1.0, billing_granularity: 100 };
        let r = report(vec![], vec![slot(1, (0, 101), 0, 1.0)]);
        assert_eq!(cost_total(&r, &m).unwrap(), 200.0);
    }

    #[test]
    fn csrr_examples() {
        assert!((cold_reduction(488, 1000).unwrap() - 0.512).abs() < 1e-12);
        assert_eq!(cold_reduction(0, 100).unwrap(), 1.0);
        assert_eq!(cold_reduction(0, 0).unwrap(), 0.0);
        assert!(cold_reduction(3, 0).is_err());
        let r = report(vec![request(1, true, 0, 2)], vec![]);
        assert_eq!(csrr(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn rue_examples() {
        let one = report(vec![request(1, false, 0, 10)], vec![slot(1, (0, 10), 10, 1.0)]);
        assert_eq!(rue(&one).unwrap(), 1.0);
        let two = report(
            vec![request(1, false, 0, 2), request(2, false, 10, 3)],
            vec![slot(1, (0, 4), 2, 1.0), slot(2, (10, 16), 3, 1.0), slot(3, (20, 20), 0, 1.0)],
        );
        assert_eq!(rue(&two).unwrap(), 0.5);
        assert_eq!(rue(&report(vec![], vec![])), Err(MetricsError::ZeroAllocation));
    }

    #[test]
    fn arl_examples() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), (1..=100).map(|v| v as f64).collect::<Vec<_>>());
        assert!((arl(&m).unwrap() - 0.9).abs() < 1e-12);
        m.insert("b".to_string(), vec![7.0; 10]);
        assert!((arl(&m).unwrap() - 0.45).abs() < 1e-12);
        m.insert("c".to_string(), vec![]);
        assert!(matches!(arl(&m), Err(MetricsError::EmptyPattern(_))));
    }

    #[test]
    fn cpi_and_pas_examples() {
        assert_eq!(cpi(10.0, 10.0, 3.0, 3.0).unwrap(), 1.0);
        assert_eq!(cpi(10.0, 5.0, 3.0, 3.0).unwrap(), 2.0);
        assert!((cpi(100.0, 40.0, 1.0, 1.2).unwrap() - 2.5 / 1.2).abs() < 1e-12);
        assert!(cpi(0.0, 1.0, 1.0, 1.0).is_err());
        assert_eq!(pas(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(pas(&[2.0], &[4.0]).unwrap(), 0.5);
        assert!(pas(&[1e-12], &[1e6]).unwrap() < 1e-6);
        assert!(matches!(pas(&[1.0], &[]), Err(MetricsError::LengthMismatch(1, 0))));
        assert_eq!(pas(&[0.0], &[1.0]), Err(MetricsError::NonPositiveTime));
    }

    #[test]
    fn sliding_cost_single_slot() {
        let m = CostModel { c_exec: 1.0, c_mem: 0.1, billing_granularity: 1 };
        let r = report(vec![request(1, true, 20, 2)], vec![slot(1, (15, 25), 2, 1.0)]);
        let series = sliding_cost(&r, &m, 100, 100);
        assert_eq!(series.len(), 1);
        assert!((series[0].1 - cost_total(&r, &m).unwrap()).abs() < 1e-12);
        let empty = report(vec![], vec![]);
        assert!(sliding_cost(&empty, &m, 50, 10).iter().all(|&(_, c)| c == 0.0));
    }
}
