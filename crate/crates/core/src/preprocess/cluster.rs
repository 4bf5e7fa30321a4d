use serde::{Deserialize, Serialize};

use super::PreprocessError;

pub const SIGMA_FLOOR: f64 = 1e-6;
pub const DEFAULT_K_MAX: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub mean: Vec<f64>,
    /// Welford sum of squared deviations per feature.
    pub m2: Vec<f64>,
    pub count: u64,
}

impl Cluster {
    fn centered_at(x: &[f64]) -> Self {
        Cluster {
            mean: x.to_vec(),
            m2: vec![0.0; x.len()],
            count: 0,
        }
    }

    /// Per-feature spread. The initial spread acts as one pseudo-observation,
    /// so young clusters are not collapsed by a couple of close samples.
    pub fn std(&self, sigma_init: &[f64]) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2
            .iter()
            .zip(sigma_init)
            .map(|(m2, s0)| ((m2 + s0 * s0) / n).sqrt().max(SIGMA_FLOOR))
            .collect()
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *m2 += delta * (v - *m);
        }
    }
}

/// Standardized weighted distance of `x` from a center.
pub fn weighted_distance(x: &[f64], mean: &[f64], std: &[f64], weights: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(std)
        .zip(weights)
        .map(|(((x, m), s), w)| {
            let z = (x - m) / s;
            w * z * z
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub cluster: usize,
    pub distance: f64,
    pub spawned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub clusters: Vec<Cluster>,
    pub weights: Vec<f64>,
    pub sigma_init: Vec<f64>,
    /// Distance beyond which a new cluster is spawned.
    pub spawn_threshold: f64,
    pub k_max: usize,
    pub spawning: bool,
}

impl ClusterModel {
    pub fn new(sigma_init: Vec<f64>, spawn_threshold: f64, k_max: usize) -> Result<Self, PreprocessError> {
        if sigma_init.is_empty() {
            return Err(PreprocessError::InvalidConfig("clustering needs at least one feature".into()));
        }
        if !(spawn_threshold >= 0.0) || k_max == 0 || sigma_init.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(PreprocessError::InvalidConfig("bad clustering parameters".into()));
        }
        let dim = sigma_init.len();
        Ok(ClusterModel {
            clusters: Vec::new(),
            weights: vec![1.0; dim],
            sigma_init,
            spawn_threshold,
            k_max,
            spawning: true,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, PreprocessError> {
        self.check_dim(weights.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(PreprocessError::InvalidConfig("feature weights must be finite and >= 0".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.sigma_init.len()
    }

    fn check_dim(&self, got: usize) -> Result<(), PreprocessError> {
        if got != self.dim() {
            return Err(PreprocessError::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }

    pub fn distance_to(&self, x: &[f64], cluster: usize) -> f64 {
        let c = &self.clusters[cluster];
        weighted_distance(x, &c.mean, &c.std(&self.sigma_init), &self.weights)
    }

    /// Nearest existing cluster; ties go to the lower id.
    pub fn nearest(&self, x: &[f64]) -> Result<Option<(usize, f64)>, PreprocessError> {
        self.check_dim(x.len())?;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.clusters.len() {
            let d = self.distance_to(x, j);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        Ok(best)
    }

    /// Picks a cluster for `x`, spawning one centered at `x` when nothing is
    /// within the threshold and there is room.
    pub fn assign(&mut self, x: &[f64]) -> Result<Assignment, PreprocessError> {
        let nearest = self.nearest(x)?;
        let room = self.spawning && self.clusters.len() < self.k_max;
        match nearest {
            Some((cluster, distance)) if distance <= self.spawn_threshold || !room => Ok(Assignment {
                cluster,
                distance,
                spawned: false,
            }),
            _ if room => {
                self.clusters.push(Cluster::centered_at(x));
                Ok(Assignment {
                    cluster: self.clusters.len() - 1,
                    distance: 0.0,
                    spawned: true,
                })
            }
            _ => Err(PreprocessError::NoClusters),
        }
    }

    pub fn update(&mut self, x: &[f64], cluster: usize) -> Result<(), PreprocessError> {
        self.check_dim(x.len())?;
        let n = self.clusters.len();
        self.clusters
            .get_mut(cluster)
            .ok_or(PreprocessError::NoSuchCluster { cluster, clusters: n })?
            .push(x);
        Ok(())
    }

    /// Assign then fold the sample into its cluster.
    pub fn observe(&mut self, x: &[f64]) -> Result<Assignment, PreprocessError> {
        let a = self.assign(x)?;
        self.update(x, a.cluster)?;
        Ok(a)
    }
}

/// Per-feature standard deviation over a batch, floored. Used as the default
/// initial cluster spread.
pub fn global_std(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let mut n = 0.0;
    for row in rows {
        n += 1.0;
        for k in 0..dim {
            let delta = row[k] - mean[k];
            mean[k] += delta / n;
            m2[k] += delta * (row[k] - mean[k]);
        }
    }
    m2.iter()
        .map(|m| if n > 1.0 { (m / (n - 1.0)).sqrt() } else { 1.0 }.max(SIGMA_FLOOR))
        .collect()
}
