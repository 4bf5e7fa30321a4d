//! Adaptive binning, wavelet features, clustering and PCA over a bursty trace.

use asrm::preprocess::{run_pipeline, PreprocessConfig};
use asrm::workloads::WorkloadSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trace = WorkloadSpec::burst_default().generate(2)?;
    let out = run_pipeline(&trace.records, &PreprocessConfig::default())?;
    let s = &out.summary;
    let widths: Vec<f64> = s.bins.iter().map(|b| b.width()).collect();
    let min = widths.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = widths.iter().cloned().fold(0.0, f64::max);
    println!("{} bins, width {min:.1}..{max:.1} ms", s.bins.len());
    println!("wavelet detail energy per level: {:.1?}", s.wavelet_detail_energy);
    println!("{} clusters", s.clusters.len());
    println!("pca eigenvalues {:.4?} (degenerate: {})", s.pca_eigenvalues, s.pca_degenerate);
    println!("{} feature rows", out.rows.len());
    Ok(())
}
