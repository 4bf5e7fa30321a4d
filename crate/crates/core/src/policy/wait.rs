use crate::domain::{HistoryWindow, Millis};

use super::{AsrmConfig, PolicyError};

/// `exp(-lambda * t) * prod(1 - p_i)`.
///
/// An infinite `lambda` means no slot can free up and yields 0 for every `t`.
pub fn wait_probability(lambda: f64, t: f64, competitor_probs: &[f64]) -> Result<f64, PolicyError> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(PolicyError::Domain(format!("hazard rate must be >= 0, got {lambda}")));
    }
    if t.is_nan() || t < 0.0 || t.is_infinite() {
        return Err(PolicyError::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    if let Some(p) = competitor_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(PolicyError::Domain(format!("competitor probability {p} outside [0, 1]")));
    }
    let survival = if lambda.is_infinite() { 0.0 } else { (-lambda * t).exp() };
    let others: f64 = competitor_probs.iter().map(|p| 1.0 - p).product();
    Ok((survival * others).clamp(0.0, 1.0))
}

/// Probability that a waiter whose request needs `predicted_service` ms claims
/// a slot within `t` ms.
pub fn competitor_probability(t: f64, predicted_service: f64) -> f64 {
    if predicted_service <= 0.0 {
        return 1.0;
    }
    (t / predicted_service).clamp(0.0, 1.0)
}

/// `timeout_base / (1 + gain * cv)` of the execution times, in ms.
pub fn adaptive_timeout(history: Option<&HistoryWindow>, cfg: &AsrmConfig) -> f64 {
    let base = cfg.timeout_base as f64;
    match history.map(|h| h.stats()) {
        Some(Ok(s)) if !s.degenerate && s.mean_ex > 0.0 => base / (1.0 + cfg.timeout_cv_gain * s.cv_ex),
        _ => base,
    }
}

/// Wait deadline for a timeout of `t_star` ms, strictly after `now`.
pub fn wait_deadline(now: Millis, t_star: f64) -> Millis {
    now + (t_star.round() as Millis).max(1)
}
