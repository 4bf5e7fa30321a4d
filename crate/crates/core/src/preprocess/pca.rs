use serde::{Deserialize, Serialize};

use super::PreprocessError;

const ZERO_NORM: f64 = 1e-12;
pub const DEFAULT_AMNESIC: f64 = 2.0;

/// Candid covariance-free incremental PCA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaState {
    pub mean: Vec<f64>,
    /// Orthonormal columns, one per component.
    pub components: Vec<Vec<f64>>,
    /// Unnormalized component estimates; their norms track the eigenvalues.
    estimates: Vec<Vec<f64>>,
    pub count: u64,
    pub amnesic: f64,
    /// Some component has seen no variance yet; its column is a placeholder.
    pub degenerate: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

impl PcaState {
    pub fn new(dim: usize, components: usize, amnesic: f64) -> Result<Self, PreprocessError> {
        if components == 0 || components > dim {
            return Err(PreprocessError::InvalidConfig(format!(
                "need 1..={dim} components, got {components}"
            )));
        }
        if !(amnesic >= 0.0) || !amnesic.is_finite() {
            return Err(PreprocessError::InvalidConfig("amnesic parameter must be finite and >= 0".into()));
        }
        let mut state = PcaState {
            mean: vec![0.0; dim],
            components: Vec::new(),
            estimates: vec![vec![0.0; dim]; components],
            count: 0,
            amnesic,
            degenerate: true,
        };
        state.orthonormalize();
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Variance captured by each component, as currently estimated.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.estimates.iter().map(|v| norm(v)).collect()
    }

    fn check_dim(&self, got: usize) -> Result<(), PreprocessError> {
        if got != self.dim() {
            return Err(PreprocessError::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }

    /// `Wᵀ(x − μ)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, PreprocessError> {
        self.check_dim(x.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(self.components.iter().map(|w| dot(w, &centered)).collect())
    }

    pub fn update(&mut self, x: &[f64]) -> Result<(), PreprocessError> {
        self.check_dim(x.len())?;
        self.count += 1;
        let n = self.count as f64;
        for (m, &v) in self.mean.iter_mut().zip(x) {
            *m += (v - *m) / n;
        }
        let mut u: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let l = self.amnesic.min(n - 1.0);
        let (keep, take) = ((n - 1.0 - l) / n, (1.0 + l) / n);
        for v in &mut self.estimates {
            let vn = norm(v);
            if vn < ZERO_NORM {
                v.copy_from_slice(&u);
            } else {
                let proj = dot(&u, v) / vn;
                v.iter_mut().for_each(|c| *c *= keep);
                axpy(v, take * proj, &u);
            }
            let vn = norm(v);
            if vn >= ZERO_NORM {
                let along = dot(&u, v) / (vn * vn);
                axpy(&mut u, -along, v);
            }
        }
        self.orthonormalize();
        Ok(())
    }

    /// Gram-Schmidt over the estimates; components without signal get the
    /// next standard basis direction outside the span so far.
    fn orthonormalize(&mut self) {
        let dim = self.dim();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.estimates.len());
        let mut degenerate = false;
        let mut fallback = 0;
        for v in &mut self.estimates {
            for w in &basis {
                let c = dot(v, w);
                axpy(v, -c, w);
            }
            let vn = norm(v);
            let column = if vn >= ZERO_NORM {
                v.iter().map(|c| c / vn).collect()
            } else {
                degenerate = true;
                v.iter_mut().for_each(|c| *c = 0.0);
                loop {
                    let mut e = vec![0.0; dim];
                    e[fallback % dim] = 1.0;
                    fallback += 1;
                    for w in &basis {
                        let c = dot(&e, w);
                        axpy(&mut e, -c, w);
                    }
                    let en = norm(&e);
                    if en > 1e-6 {
                        break e.iter().map(|c| c / en).collect();
                    }
                }
            };
            basis.push(column);
        }
        self.components = basis;
        self.degenerate = degenerate;
    }
}
