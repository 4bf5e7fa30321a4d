use serde::{Deserialize, Serialize};

use super::PreprocessError;

/// Multi-level orthonormal Haar decomposition. Level 0 is the finest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletFeatures {
    pub levels: usize,
    /// Approximation (scaling) coefficients after each level.
    pub approx: Vec<Vec<f64>>,
    /// Detail (wavelet) coefficients produced at each level.
    pub detail: Vec<Vec<f64>>,
    pub original_len: usize,
    pub padded_len: usize,
}

impl WaveletFeatures {
    /// Coarsest approximation; the only one the inverse needs.
    pub fn coarsest(&self) -> &[f64] {
        self.approx.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Sum of squared detail coefficients per level.
    pub fn detail_energy(&self) -> Vec<f64> {
        self.detail.iter().map(|d| d.iter().map(|c| c * c).sum()).collect()
    }

    /// Total energy of the coefficients; equals the padded input's energy.
    pub fn energy(&self) -> f64 {
        self.coarsest().iter().map(|c| c * c).sum::<f64>() + self.detail_energy().iter().sum::<f64>()
    }
}

/// Zero-pads to a multiple of `2^levels` and applies `levels` Haar steps.
pub fn wavelet_features(series: &[f64], levels: usize) -> Result<WaveletFeatures, PreprocessError> {
    if levels == 0 {
        return Err(PreprocessError::InvalidConfig("wavelet levels must be at least 1".into()));
    }
    let block = 1usize
        .checked_shl(levels as u32)
        .filter(|_| levels < usize::BITS as usize)
        .ok_or(PreprocessError::LevelsTooDeep { levels, len: series.len() })?;
    let padded_len = series.len().div_ceil(block) * block;
    if block > padded_len {
        return Err(PreprocessError::LevelsTooDeep { levels, len: padded_len });
    }
    let mut current = series.to_vec();
    current.resize(padded_len, 0.0);
    let mut approx = Vec::with_capacity(levels);
    let mut detail = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (a, d) = haar_step(&current);
        detail.push(d);
        approx.push(a.clone());
        current = a;
    }
    Ok(WaveletFeatures {
        levels,
        approx,
        detail,
        original_len: series.len(),
        padded_len,
    })
}

fn haar_step(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    x.chunks_exact(2)
        .map(|p| ((p[0] + p[1]) * s, (p[0] - p[1]) * s))
        .unzip()
}

/// Reconstructs the original (unpadded) series.
pub fn inverse(features: &WaveletFeatures) -> Vec<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut current = features.coarsest().to_vec();
    for d in features.detail.iter().rev() {
        current = current
            .iter()
            .zip(d)
            .flat_map(|(&a, &d)| [(a + d) * s, (a - d) * s])
            .collect();
    }
    current.truncate(features.original_len);
    current
}
