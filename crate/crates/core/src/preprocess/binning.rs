use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::domain::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningConfig {
    /// Narrowest bin, reached as density grows without bound.
    pub b_min: f64,
    /// Widest bin, used where nothing arrived in the trailing window.
    pub b_max: f64,
    /// How fast widths shrink with density.
    pub lambda_adapt: f64,
    /// Trailing window for the density estimate.
    pub window_ms: f64,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            b_min: 10.0,
            b_max: 1000.0,
            lambda_adapt: 1.0,
            window_ms: 1000.0,
        }
    }
}

impl BinningConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let finite = [self.b_min, self.b_max, self.lambda_adapt, self.window_ms]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.b_min <= 0.0 || self.b_min > self.b_max || self.lambda_adapt < 0.0 || self.window_ms <= 0.0 {
            return Err(PreprocessError::InvalidConfig(format!("bad binning config {self:?}")));
        }
        Ok(())
    }

    /// Width of a bin opening at local density `rho` (events per ms).
    pub fn width(&self, rho: f64) -> f64 {
        let shrink = 1.0 + self.lambda_adapt * rho;
        if shrink == 1.0 {
            return self.b_max;
        }
        let w = self.b_min * ((self.b_max / self.b_min).ln() / shrink).exp();
        // exp(ln(x)) can land an ulp away from x.
        w.clamp(self.b_min, self.b_max)
    }
}

/// Half-open `[start, end)` interval in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub start: f64,
    pub end: f64,
    /// Density that set this bin's width.
    pub density: f64,
}

impl Bin {
    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Tiles `[first, last]` with density-adaptive bins. The final bin keeps its
/// full width, so it may end past `last`.
pub fn adaptive_bins(timestamps: &[Millis], cfg: &BinningConfig) -> Result<Vec<Bin>, PreprocessError> {
    cfg.validate()?;
    let (&first, &last) = match (timestamps.first(), timestamps.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(PreprocessError::EmptyInput),
    };
    if timestamps.windows(2).any(|w| w[0] > w[1]) {
        return Err(PreprocessError::Unsorted);
    }
    let ts: Vec<f64> = timestamps.iter().map(|&t| t as f64).collect();
    let last = last as f64;
    let mut bins = Vec::new();
    let mut start = first as f64;
    // Two cursors over the sorted stamps bound the trailing window.
    let (mut lo, mut hi) = (0usize, 0usize);
    loop {
        while hi < ts.len() && ts[hi] < start {
            hi += 1;
        }
        while lo < hi && ts[lo] < start - cfg.window_ms {
            lo += 1;
        }
        let density = (hi - lo) as f64 / cfg.window_ms;
        let end = start + cfg.width(density);
        bins.push(Bin { start, end, density });
        if end > last {
            break;
        }
        start = end;
    }
    Ok(bins)
}

/// Number of timestamps falling in each bin.
pub fn bin_counts(timestamps: &[Millis], bins: &[Bin]) -> Vec<usize> {
    let mut counts = vec![0; bins.len()];
    let mut b = 0;
    for &t in timestamps {
        let t = t as f64;
        while b < bins.len() && t >= bins[b].end {
            b += 1;
        }
        if b < bins.len() && bins[b].contains(t) {
            counts[b] += 1;
        }
    }
    counts
}
