//! Trace preprocessing: density-adaptive time bins, Haar wavelet features of
//! the binned rate, online request clustering and incremental PCA.

mod binning;
mod cluster;
mod pca;
mod wavelet;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binning::{adaptive_bins, bin_counts, Bin, BinningConfig};
pub use cluster::{global_std, weighted_distance, Assignment, Cluster, ClusterModel, DEFAULT_K_MAX, SIGMA_FLOOR};
pub use pca::{PcaState, DEFAULT_AMNESIC};
pub use wavelet::{inverse, wavelet_features, WaveletFeatures};

use crate::domain::{RequestId, RequestRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("no input")]
    EmptyInput,
    #[error("timestamps are not sorted")]
    Unsorted,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{levels} levels need at least 2^{levels} samples, have {len}")]
    LevelsTooDeep { levels: usize, len: usize },
    #[error("no clusters and spawning is disabled")]
    NoClusters,
    #[error("cluster {cluster} does not exist ({clusters} clusters)")]
    NoSuchCluster { cluster: usize, clusters: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Number of per-request features the pipeline extracts.
pub const REQUEST_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub b_min: f64,
    pub b_max: f64,
    pub lambda_adapt: f64,
    pub window_ms: f64,
    pub wavelet_levels: usize,
    pub spawn_threshold: f64,
    pub k_max: usize,
    /// Initial cluster spread per feature; global feature std when absent.
    pub sigma_init: Option<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
    pub pca_components: usize,
    pub amnesic: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        let b = BinningConfig::default();
        PreprocessConfig {
            b_min: b.b_min,
            b_max: b.b_max,
            lambda_adapt: b.lambda_adapt,
            window_ms: b.window_ms,
            wavelet_levels: 4,
            spawn_threshold: 3.0,
            k_max: DEFAULT_K_MAX,
            sigma_init: None,
            weights: None,
            pca_components: 2,
            amnesic: DEFAULT_AMNESIC,
        }
    }
}

impl PreprocessConfig {
    pub fn binning(&self) -> BinningConfig {
        BinningConfig {
            b_min: self.b_min,
            b_max: self.b_max,
            lambda_adapt: self.lambda_adapt,
            window_ms: self.window_ms,
        }
    }
}

/// `[ln(1 + service), memory, ln(1 + gap since the function's previous arrival)]`.
pub fn request_features(records: &[RequestRecord]) -> Vec<Vec<f64>> {
    let mut last: BTreeMap<&str, u64> = BTreeMap::new();
    records
        .iter()
        .map(|r| {
            let gap = last
                .insert(r.function_id.as_str(), r.arrival_time)
                .map_or(0, |prev| r.arrival_time.saturating_sub(prev));
            vec![(r.service_time as f64).ln_1p(), r.memory_gb, (gap as f64).ln_1p()]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestFeatures {
    pub request_id: RequestId,
    pub bin: usize,
    pub cluster: usize,
    pub distance: f64,
    pub projection: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub count: u64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub bins: Vec<Bin>,
    pub bin_counts: Vec<usize>,
    /// Arrivals per second in each bin; the series fed to the wavelet step.
    pub bin_rates: Vec<f64>,
    pub wavelet_detail_energy: Vec<f64>,
    pub wavelet_approx: Vec<f64>,
    pub clusters: Vec<ClusterSummary>,
    pub pca_mean: Vec<f64>,
    pub pca_components: Vec<Vec<f64>>,
    pub pca_eigenvalues: Vec<f64>,
    pub pca_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub rows: Vec<RequestFeatures>,
    pub summary: PipelineSummary,
}

/// Runs every stage over a sorted trace in arrival order.
pub fn run_pipeline(records: &[RequestRecord], cfg: &PreprocessConfig) -> Result<PipelineOutput, PreprocessError> {
    let arrivals: Vec<u64> = records.iter().map(|r| r.arrival_time).collect();
    let bins = adaptive_bins(&arrivals, &cfg.binning())?;
    let counts = bin_counts(&arrivals, &bins);
    let rates: Vec<f64> = bins
        .iter()
        .zip(&counts)
        .map(|(b, &c)| c as f64 * 1000.0 / b.width())
        .collect();
    let wavelet = wavelet_features(&rates, cfg.wavelet_levels)?;

    let features = request_features(records);
    let sigma_init = match &cfg.sigma_init {
        Some(s) => s.clone(),
        None => global_std(&features, REQUEST_FEATURES),
    };
    let mut clusters = ClusterModel::new(sigma_init, cfg.spawn_threshold, cfg.k_max)?;
    if let Some(w) = &cfg.weights {
        clusters = clusters.with_weights(w.clone())?;
    }
    let mut pca = PcaState::new(REQUEST_FEATURES, cfg.pca_components, cfg.amnesic)?;

    let mut rows = Vec::with_capacity(records.len());
    let mut bin = 0;
    for (r, x) in records.iter().zip(&features) {
        while bin + 1 < bins.len() && (r.arrival_time as f64) >= bins[bin].end {
            bin += 1;
        }
        let a = clusters.observe(x)?;
        pca.update(x)?;
        rows.push(RequestFeatures {
            request_id: r.id,
            bin,
            cluster: a.cluster,
            distance: a.distance,
            projection: pca.project(x)?,
        });
    }

    let cluster_table = clusters
        .clusters
        .iter()
        .enumerate()
        .map(|(id, c)| ClusterSummary {
            id,
            count: c.count,
            mean: c.mean.clone(),
            std: c.std(&clusters.sigma_init),
        })
        .collect();
    Ok(PipelineOutput {
        rows,
        summary: PipelineSummary {
            wavelet_detail_energy: wavelet.detail_energy(),
            wavelet_approx: wavelet.coarsest().to_vec(),
            bins,
            bin_counts: counts,
            bin_rates: rates,
            clusters: cluster_table,
            pca_eigenvalues: pca.eigenvalues(),
            pca_mean: pca.mean.clone(),
            pca_components: pca.components.clone(),
            pca_degenerate: pca.degenerate,
        },
    })
}
