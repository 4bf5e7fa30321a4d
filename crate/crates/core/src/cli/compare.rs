use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::CliError;
use crate::domain::{Millis, RequestRecord};
use crate::engine::{self, SimConfig, SimReport};
use crate::metrics::{self, MetricsReport};
use crate::policy::PolicyKind;

/// A named trace and the simulation seed it runs under.
#[derive(Debug, Clone)]
pub struct NamedTrace {
    pub name: String,
    pub seed: u64,
    pub records: Vec<RequestRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub trace: String,
    pub metrics: MetricsReport,
    pub digest: String,
}

/// Cumulative metrics at evenly spaced times of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergencePoint {
    pub trace: String,
    pub policy: String,
    pub t_ms: Millis,
    pub requests: usize,
    pub csrr: f64,
    pub cold_rate: f64,
    pub mean_latency: f64,
    /// Cost accrued since the previous point.
    pub window_cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub convergence: Vec<ConvergencePoint>,
}

pub const CONVERGENCE_POINTS: u64 = 20;

pub fn simulate(records: &[RequestRecord], kind: PolicyKind, cfg: &RunConfig, seed: u64) -> Result<SimReport, CliError> {
    let sim = SimConfig { seed, ..cfg.sim.clone() };
    let mut policy = kind
        .build(&cfg.asrm, &cfg.baseline, sim.cold_start_base)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    engine::run(records, policy.as_mut(), &sim).map_err(|e| CliError::Data(e.to_string()))
}

fn colds_until(report: &SimReport, t: Millis) -> (usize, usize) {
    let seen = report.requests.iter().filter(|r| r.arrival <= t);
    seen.fold((0, 0), |(n, c), r| (n + 1, c + r.cold_start as usize))
}

fn convergence(trace: &str, report: &SimReport, base: &SimReport, cfg: &RunConfig) -> Vec<ConvergencePoint> {
    let end = report.end_time.max(base.end_time).max(1);
    let tick = end.div_ceil(CONVERGENCE_POINTS).max(1);
    let costs = metrics::sliding_cost(report, &cfg.cost, tick, tick);
    costs
        .into_iter()
        .map(|(t, window_cost)| {
            let (requests, colds) = colds_until(report, t);
            let (_, base_colds) = colds_until(base, t);
            let done: Vec<f64> = report
                .requests
                .iter()
                .filter_map(|r| r.completion.filter(|&c| c <= t).map(|c| (c - r.arrival) as f64))
                .collect();
            ConvergencePoint {
                trace: trace.to_string(),
                policy: report.policy.clone(),
                t_ms: t,
                requests,
                csrr: metrics::cold_reduction(colds, base_colds).unwrap_or(0.0),
                cold_rate: if requests > 0 { colds as f64 / requests as f64 } else { 0.0 },
                mean_latency: if done.is_empty() { 0.0 } else { done.iter().sum::<f64>() / done.len() as f64 },
                window_cost,
            }
        })
        .collect()
}

/// Runs every policy on every trace in parallel. CSRR and CPI are relative
/// to fixed keep-alive on the same trace; rows come out in trace order, then
/// policy name order.
pub fn compare(traces: &[NamedTrace], kinds: &[PolicyKind], cfg: &RunConfig) -> Result<Comparison, CliError> {
    let mut kinds = kinds.to_vec();
    kinds.sort_by_key(|k| k.as_str());
    kinds.dedup();
    let mut jobs: Vec<(usize, PolicyKind)> = Vec::new();
    for i in 0..traces.len() {
        jobs.push((i, PolicyKind::FixedKeepalive));
        for &k in &kinds {
            if k != PolicyKind::FixedKeepalive {
                jobs.push((i, k));
            }
        }
    }
    let reports = jobs
        .par_iter()
        .map(|&(i, k)| simulate(&traces[i].records, k, cfg, traces[i].seed))
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut rows = Vec::new();
    let mut conv = Vec::new();
    let mut at = 0;
    for (i, t) in traces.iter().enumerate() {
        let group: Vec<(PolicyKind, &SimReport)> = jobs[at..]
            .iter()
            .take_while(|(j, _)| *j == i)
            .map(|&(_, k)| k)
            .zip(&reports[at..])
            .collect();
        at += group.len();
        let base = group[0].1;
        let mut sorted = group.clone();
        sorted.sort_by_key(|(k, _)| k.as_str());
        for (k, report) in sorted {
            if !kinds.contains(&k) {
                continue;
            }
            let m = metrics::evaluate(report, base, &cfg.cost).map_err(|e| CliError::Data(format!("{}: {e}", t.name)))?;
            rows.push(ComparisonRow {
                trace: t.name.clone(),
                metrics: m,
                digest: report.digest.clone(),
            });
            conv.extend(convergence(&t.name, report, base, cfg));
        }
    }
    Ok(Comparison { rows, convergence: conv })
}

/// Table-shaped CSV: one row per (trace, policy) with the four headline metrics.
pub fn table_csv(rows: &[ComparisonRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["trace", "policy", "csrr", "rue", "arl", "cpi"]).map_err(io)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.trace.clone(),
            m.policy.clone(),
            format!("{:.6}", m.csrr),
            format!("{:.6}", m.rue),
            format!("{:.6}", m.arl),
            format!("{:.6}", m.cpi),
        ])
        .map_err(io)?;
    }
    finish(w)
}

pub fn convergence_csv(points: &[ConvergencePoint]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(|e| CliError::Data(e.to_string()))?;
    }
    finish(w)
}

pub(super) fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, CliError> {
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Data(e.to_string()))
}
