//! Regularized parameter search for ASRM: random search followed by
//! coordinate descent over a normalized box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Millis, RequestRecord};
use crate::engine::{self, SimConfig, SimReport};
use crate::metrics::{self, CostModel};
use crate::policy::{Asrm, AsrmConfig, BaselineConfig, PolicyKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TunerError {
    #[error("no workloads to tune on")]
    EmptyWorkloads,
    #[error("budget must be at least one evaluation")]
    ZeroBudget,
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),
    #[error("unknown tunable parameter {0:?}")]
    UnknownParam(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBound {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// Simulated provider characteristics the search is specialised to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderProfile {
    pub cold_start_base: Millis,
    /// Multiplier on every cold start (snapshot-capable providers < 1).
    pub cold_scale: f64,
    pub billing_granularity: Millis,
}

impl Default for ProviderProfile {
    fn default() -> Self {
        ProviderProfile {
            cold_start_base: 500,
            cold_scale: 1.0,
            billing_granularity: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub params: Vec<ParamBound>,
    pub profile: ProviderProfile,
}

impl ParamSpace {
    pub fn new(params: Vec<ParamBound>) -> Result<Self, TunerError> {
        let space = ParamSpace {
            params,
            profile: ProviderProfile::default(),
        };
        space.validate()?;
        Ok(space)
    }

    /// Idle quantile, wait threshold, timeout base and timeout CV gain.
    pub fn asrm_default() -> Self {
        let b = |name: &str, lower, upper| ParamBound {
            name: name.into(),
            lower,
            upper,
        };
        ParamSpace {
            params: vec![
                b("idle_quantile", 0.5, 0.99),
                b("wait_threshold", 0.05, 0.95),
                b("timeout_base", 100.0, 5000.0),
                b("timeout_cv_gain", 0.0, 4.0),
            ],
            profile: ProviderProfile::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        if self.params.is_empty() {
            return Err(TunerError::InvalidSpace("no parameters".into()));
        }
        for p in &self.params {
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return Err(TunerError::InvalidSpace(format!("bad bounds for {}", p.name)));
            }
        }
        let p = &self.profile;
        if p.cold_scale < 0.0 || !p.cold_scale.is_finite() || p.billing_granularity == 0 {
            return Err(TunerError::InvalidSpace("bad provider profile".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn normalize(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.params)
            .map(|(t, p)| (t - p.lower) / (p.upper - p.lower))
            .collect()
    }

    pub fn denormalize(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(&self.params)
            .map(|(u, p)| p.lower + u * (p.upper - p.lower))
            .collect()
    }
}

/// Unregularized loss at a point of the (denormalized) space.
pub trait Objective: Sync {
    fn evaluate(&self, theta: &[f64]) -> Result<f64, TunerError>;
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn evaluate(&self, theta: &[f64]) -> Result<f64, TunerError> {
        Ok(self(theta))
    }
}

/// Writes named tunables into an ASRM config.
pub fn apply_params(cfg: &mut AsrmConfig, names: &[ParamBound], theta: &[f64]) -> Result<(), TunerError> {
    for (p, &v) in names.iter().zip(theta) {
        match p.name.as_str() {
            "idle_quantile" => cfg.idle_quantile = v,
            "wait_threshold" => cfg.wait_threshold = v,
            "timeout_base" => cfg.timeout_base = v.round().max(1.0) as Millis,
            "timeout_cv_gain" => cfg.timeout_cv_gain = v,
            "learning_rate" => cfg.learning_rate = v,
            other => return Err(TunerError::UnknownParam(other.into())),
        }
    }
    Ok(())
}

/// Sum over workloads of −CPI of ASRM against fixed keep-alive.
pub struct SimObjective {
    space: ParamSpace,
    base: AsrmConfig,
    sim: SimConfig,
    cost: CostModel,
    workloads: Vec<(Vec<RequestRecord>, SimReport)>,
}

impl SimObjective {
    pub fn new(
        space: &ParamSpace,
        workloads: Vec<Vec<RequestRecord>>,
        base: AsrmConfig,
        baseline: &BaselineConfig,
        sim: SimConfig,
    ) -> Result<Self, TunerError> {
        if workloads.is_empty() {
            return Err(TunerError::EmptyWorkloads);
        }
        space.validate()?;
        let profile = space.profile;
        let sim = SimConfig {
            cold_start_base: (profile.cold_start_base as f64 * profile.cold_scale).round() as Millis,
            gc_tick: profile.billing_granularity,
            ..sim
        };
        let base = AsrmConfig {
            billing_granularity: profile.billing_granularity,
            ..base
        };
        let cost = CostModel {
            billing_granularity: profile.billing_granularity,
            ..CostModel::default()
        };
        let eval_err = |e: &dyn std::fmt::Display| TunerError::Evaluation(e.to_string());
        let workloads = workloads
            .into_par_iter()
            .map(|trace| {
                let mut fixed = PolicyKind::FixedKeepalive
                    .build(&base, baseline, sim.cold_start_base)
                    .map_err(|e| eval_err(&e))?;
                let report = engine::run(&trace, fixed.as_mut(), &sim).map_err(|e| eval_err(&e))?;
                Ok((trace, report))
            })
            .collect::<Result<Vec<_>, TunerError>>()?;
        Ok(SimObjective {
            space: space.clone(),
            base,
            sim,
            cost,
            workloads,
        })
    }
}

impl Objective for SimObjective {
    fn evaluate(&self, theta: &[f64]) -> Result<f64, TunerError> {
        let mut cfg = self.base.clone();
        apply_params(&mut cfg, &self.space.params, theta)?;
        let err = |e: &dyn std::fmt::Display| TunerError::Evaluation(e.to_string());
        let mut loss = 0.0;
        for (trace, baseline) in &self.workloads {
            let mut asrm = Asrm::new(cfg.clone()).map_err(|e| err(&e))?;
            let report = engine::run(trace, &mut asrm, &self.sim).map_err(|e| err(&e))?;
            let l_opt = metrics::mean_latency(&report).ok_or_else(|| TunerError::Evaluation("no completions".into()))?;
            let l_base = metrics::mean_latency(baseline).ok_or_else(|| TunerError::Evaluation("no completions".into()))?;
            let c_opt = metrics::cost_total(&report, &self.cost).map_err(|e| err(&e))?;
            let c_base = metrics::cost_total(baseline, &self.cost).map_err(|e| err(&e))?;
            loss -= metrics::cpi(l_base, l_opt, c_base, c_opt).map_err(|e| err(&e))?;
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Random,
    Coordinate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub eval: usize,
    pub phase: Phase,
    pub theta: Vec<f64>,
    pub objective: f64,
    /// Objective plus the norm penalty.
    pub loss: f64,
    /// Best loss among evaluations so far.
    pub incumbent_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub theta_star: Vec<f64>,
    pub loss_star: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

fn penalty(lambda_reg: f64, unit: &[f64]) -> f64 {
    let n = unit.iter().map(|u| u * u).sum::<f64>().sqrt();
    // Keeps an infinite weight from turning 0 * inf into NaN at the origin.
    if n == 0.0 {
        0.0
    } else {
        lambda_reg * n
    }
}

struct Search<'a> {
    space: &'a ParamSpace,
    lambda_reg: f64,
    trajectory: Vec<TrajectoryPoint>,
    best: Option<(Vec<f64>, f64)>,
}

impl Search<'_> {
    fn record(&mut self, phase: Phase, unit: Vec<f64>, objective: f64) -> bool {
        let loss = objective + penalty(self.lambda_reg, &unit);
        let improved = self.best.as_ref().is_none_or(|(_, b)| loss < *b);
        if improved {
            self.best = Some((unit.clone(), loss));
        }
        let incumbent_loss = self.best.as_ref().map_or(loss, |b| b.1);
        self.trajectory.push(TrajectoryPoint {
            eval: self.trajectory.len(),
            phase,
            theta: self.space.denormalize(&unit),
            objective,
            loss,
            incumbent_loss,
        });
        improved
    }
}

/// Half the budget on uniform random points (evaluated in parallel), the rest
/// on coordinate descent from the best of them with a halving step.
pub fn tune(
    space: &ParamSpace,
    objective: &dyn Objective,
    lambda_reg: f64,
    budget: usize,
    seed: u64,
) -> Result<TuneResult, TunerError> {
    space.validate()?;
    if budget == 0 {
        return Err(TunerError::ZeroBudget);
    }
    if !(lambda_reg >= 0.0) {
        return Err(TunerError::InvalidSpace("lambda_reg must be >= 0".into()));
    }
    let dim = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_random = budget.div_ceil(2);
    let points: Vec<Vec<f64>> = (0..n_random)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let values = points
        .par_iter()
        .map(|u| objective.evaluate(&space.denormalize(u)))
        .collect::<Result<Vec<f64>, TunerError>>()?;

    let mut search = Search {
        space,
        lambda_reg,
        trajectory: Vec::with_capacity(budget),
        best: None,
    };
    for (u, v) in points.into_iter().zip(values) {
        search.record(Phase::Random, u, v);
    }

    let mut step = 0.25;
    let mut used = n_random;
    'descent: while used < budget && step > 1e-12 {
        let mut moved = false;
        for k in 0..dim {
            for dir in [1.0, -1.0] {
                if used >= budget {
                    break 'descent;
                }
                let Some((incumbent, _)) = search.best.clone() else {
                    break 'descent;
                };
                let mut cand = incumbent.clone();
                cand[k] = (cand[k] + dir * step).clamp(0.0, 1.0);
                if cand[k] == incumbent[k] {
                    continue;
                }
                let v = objective.evaluate(&space.denormalize(&cand))?;
                used += 1;
                if search.record(Phase::Coordinate, cand, v) {
                    moved = true;
                }
            }
        }
        if !moved {
            step /= 2.0;
        }
    }

    let (unit, loss_star) = search.best.ok_or(TunerError::ZeroBudget)?;
    Ok(TuneResult {
        theta_star: space.denormalize(&unit),
        loss_star,
        trajectory: search.trajectory,
    })
}

/// Re-evaluates the penalized loss at a point, for checking a tuning result.
pub fn penalized_loss(space: &ParamSpace, objective: &dyn Objective, lambda_reg: f64, theta: &[f64]) -> Result<f64, TunerError> {
    Ok(objective.evaluate(theta)? + penalty(lambda_reg, &space.normalize(theta)))
}
