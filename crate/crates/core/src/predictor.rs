//! Gaussian kernel density estimation over inter-arrival times and the
//! slot-survival forecast derived from it.
//!
//! Integrals (CDF, conditional expectation) use one fixed grid per model:
//! step `h/10`, from `min(T) - 6h` to `max(T) + 6h`. Between grid points the
//! density is taken as linear, and moments of that interpolant are computed
//! exactly, so the conditional expectation is monotone in the elapsed time.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

/// Used when fewer than two samples are available for bandwidth selection.
pub const DEFAULT_BANDWIDTH_MS: f64 = 250.0;
pub const MIN_BANDWIDTH_MS: f64 = 1.0;
/// Grid step as a fraction of the bandwidth.
pub const GRID_STEPS_PER_BANDWIDTH: f64 = 10.0;
/// Grid extends this many bandwidths past the extreme samples.
pub const GRID_TRUNCATION: f64 = 6.0;
/// Kernel contributions beyond this many bandwidths are below 1e-14 and dropped.
const KERNEL_CUTOFF: f64 = 8.0;
const MAX_GRID_POINTS: usize = 1 << 20;
const DEGENERATE_TAIL_MASS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error("KDE model has no samples")]
    EmptyModel,
    #[error("bandwidth selection needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("samples must be finite")]
    NonFiniteSample,
}

#[inline]
fn gaussian(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// Kernel density estimate with a Gaussian kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeModel {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(mut samples: Vec<f64>, bandwidth: f64) -> Result<Self, PredictorError> {
        if samples.is_empty() {
            return Err(PredictorError::EmptyModel);
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(PredictorError::InvalidBandwidth(bandwidth));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(PredictorError::NonFiniteSample);
        }
        samples.sort_by(f64::total_cmp);
        Ok(KdeModel { samples, bandwidth })
    }

    /// Bandwidth from [`bandwidth_silverman`], or [`DEFAULT_BANDWIDTH_MS`] below two samples.
    pub fn with_silverman(samples: Vec<f64>) -> Result<Self, PredictorError> {
        let h = match bandwidth_silverman(&samples) {
            Ok(h) => h,
            Err(PredictorError::TooFewSamples(_)) => DEFAULT_BANDWIDTH_MS,
            Err(e) => return Err(e),
        };
        KdeModel::new(samples, h)
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Samples in ascending order.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn density(&self, t: f64) -> f64 {
        kde_density(self, t)
    }
}

/// `f(t) = 1/(n h) * sum_i K((t - T_i) / h)`, summed over every sample.
pub fn kde_density(model: &KdeModel, t: f64) -> f64 {
    let h = model.bandwidth;
    let sum: f64 = model.samples.iter().map(|&ti| gaussian((t - ti) / h)).sum();
    sum / (model.samples.len() as f64 * h)
}

/// `h = 0.9 * min(sd, IQR/1.34) * n^(-1/5)`, floored at 1 ms. When the IQR
/// is zero but the spread is not, the standard deviation alone is used.
pub fn bandwidth_silverman(samples: &[f64]) -> Result<f64, PredictorError> {
    let n = samples.len();
    if n < 2 {
        return Err(PredictorError::TooFewSamples(n));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(PredictorError::NonFiniteSample);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_linear(&sorted, 0.75) - quantile_linear(&sorted, 0.25);
    let robust = iqr / 1.34;
    let spread = if robust > 0.0 { sd.min(robust) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    Ok(h.max(MIN_BANDWIDTH_MS))
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Density of one model tabulated on its integration grid, with running
/// mass and first moment. Building it costs O(n * 160); queries are cheap.
#[derive(Debug, Clone, Serialize)]
pub struct KdeGrid {
    start: f64,
    step: f64,
    density: Vec<f64>,
    /// `mass[j]` = integral of the interpolated density from `start` to grid point j.
    mass: Vec<f64>,
    /// Same for `t * f(t)`.
    moment: Vec<f64>,
}

impl KdeGrid {
    pub fn build(model: &KdeModel) -> KdeGrid {
        let h = model.bandwidth;
        let lo = model.samples[0] - GRID_TRUNCATION * h;
        let hi = model.samples[model.samples.len() - 1] + GRID_TRUNCATION * h;
        let mut step = h / GRID_STEPS_PER_BANDWIDTH;
        let mut points = ((hi - lo) / step).ceil() as usize + 1;
        if points > MAX_GRID_POINTS {
            points = MAX_GRID_POINTS;
            step = (hi - lo) / (points - 1) as f64;
        }
        let norm = 1.0 / (model.samples.len() as f64 * h * (2.0 * PI).sqrt());
        let mut density = vec![0.0; points];
        // Gaussian at successive grid points via the ratio recurrence
        // g(k+1)/g(k) = exp(-(u_k * d + d^2 / 2)), with u_k = u_0 + k d.
        let d = step / h;
        let decay = (-d * d).exp();
        for &ti in &model.samples {
            let first = (((ti - KERNEL_CUTOFF * h) - lo) / step).ceil().max(0.0) as usize;
            let last = ((((ti + KERNEL_CUTOFF * h) - lo) / step).floor() as usize).min(points - 1);
            if first > last {
                continue;
            }
            let u0 = (lo + first as f64 * step - ti) / h;
            let mut g = (-0.5 * u0 * u0).exp();
            let mut ratio = (-(u0 * d + 0.5 * d * d)).exp();
            for cell in density.iter_mut().take(last + 1).skip(first) {
                *cell += g;
                g *= ratio;
                ratio *= decay;
            }
        }
        for v in &mut density {
            *v *= norm;
        }
        let mut mass = vec![0.0; points];
        let mut moment = vec![0.0; points];
        for j in 1..points {
            let a = lo + (j - 1) as f64 * step;
            let b = a + step;
            let (fa, fb) = (density[j - 1], density[j]);
            mass[j] = mass[j - 1] + 0.5 * step * (fa + fb);
            moment[j] = moment[j - 1] + linear_moment(a, b, fa, fb);
        }
        KdeGrid {
            start: lo,
            step,
            density,
            mass,
            moment,
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.start + (self.density.len() - 1) as f64 * self.step
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn point(&self, j: usize) -> f64 {
        self.start + j as f64 * self.step
    }

    /// Numeric integral of the density over the whole grid.
    pub fn total_mass(&self) -> f64 {
        *self.mass.last().unwrap_or(&0.0)
    }

    /// Numeric CDF at `t` (0 before the grid, total mass after it).
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= self.start {
            return 0.0;
        }
        if t >= self.end() {
            return self.total_mass();
        }
        let (j, a, fa, ft) = self.locate(t);
        self.mass[j] + 0.5 * (t - a) * (fa + ft)
    }

    /// Smallest grid point whose CDF reaches `q`.
    pub fn quantile(&self, q: f64) -> Result<f64, PredictorError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(PredictorError::InvalidQuantile(q));
        }
        let j = self.mass.partition_point(|&m| m < q).min(self.mass.len() - 1);
        Ok(self.point(j))
    }

    /// `E[T | T > elapsed]`; `None` when the tail mass is below 1e-9.
    pub fn expected_after(&self, elapsed: f64) -> Option<f64> {
        let end = self.end();
        if elapsed >= end {
            return None;
        }
        let (tail_mass, tail_moment) = if elapsed <= self.start {
            (self.total_mass(), *self.moment.last().unwrap_or(&0.0))
        } else {
            let (j, a, _, fe) = self.locate(elapsed);
            let b = a + self.step;
            let fb = self.density[j + 1];
            let head_mass = 0.5 * (b - elapsed) * (fe + fb);
            let head_moment = linear_moment(elapsed, b, fe, fb);
            (
                head_mass + self.total_mass() - self.mass[j + 1],
                head_moment + self.moment.last().unwrap_or(&0.0) - self.moment[j + 1],
            )
        };
        if tail_mass < DEGENERATE_TAIL_MASS {
            return None;
        }
        Some((tail_moment / tail_mass).max(elapsed))
    }

    /// Cell index, cell start, density at the cell start and interpolated density at `t`.
    fn locate(&self, t: f64) -> (usize, f64, f64, f64) {
        let j = (((t - self.start) / self.step).floor() as usize).min(self.density.len() - 2);
        let a = self.point(j);
        let (fa, fb) = (self.density[j], self.density[j + 1]);
        let ft = fa + (fb - fa) * ((t - a) / self.step);
        (j, a, fa, ft)
    }
}

/// Integral of `t * f(t)` over `[a, b]` for `f` linear from `fa` to `fb`.
fn linear_moment(a: f64, b: f64, fa: f64, fb: f64) -> f64 {
    (b - a) * (a * (2.0 * fa + fb) + b * (fa + 2.0 * fb)) / 6.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalForecast {
    /// `E[T | T > elapsed]`, measured from the previous arrival.
    pub expected_next_arrival: f64,
    pub elapsed: f64,
    pub produced_at: f64,
    /// No density mass beyond `elapsed`; the forecast collapses to `elapsed`.
    pub degenerate: bool,
}

impl SurvivalForecast {
    /// Expected remaining time until the next arrival.
    pub fn remaining(&self) -> f64 {
        self.expected_next_arrival - self.elapsed
    }
}

pub fn predict_survival(model: &KdeModel, elapsed_idle: f64) -> SurvivalForecast {
    forecast_from_grid(&KdeGrid::build(model), elapsed_idle, 0.0)
}

pub fn forecast_from_grid(grid: &KdeGrid, elapsed_idle: f64, produced_at: f64) -> SurvivalForecast {
    match grid.expected_after(elapsed_idle) {
        Some(e) => SurvivalForecast {
            expected_next_arrival: e,
            elapsed: elapsed_idle,
            produced_at,
            degenerate: false,
        },
        None => SurvivalForecast {
            expected_next_arrival: elapsed_idle,
            elapsed: elapsed_idle,
            produced_at,
            degenerate: true,
        },
    }
}

pub fn interarrival_quantile(model: &KdeModel, q: f64) -> Result<f64, PredictorError> {
    KdeGrid::build(model).quantile(q)
}
