//! Search ASRM parameters against simulated latency and cost.

use asrm::engine::SimConfig;
use asrm::policy::{AsrmConfig, BaselineConfig};
use asrm::tuner::{tune, ParamSpace, SimObjective};
use asrm::workloads::WorkloadSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = WorkloadSpec::family("uniform").ok_or("unknown family")?;
    if let WorkloadSpec::UniformHighfreq { duration_ms, .. } = &mut spec {
        *duration_ms = 20_000;
    }
    let records = spec.generate(3)?.records;
    let space = ParamSpace::asrm_default();
    let sim = SimConfig { seed: 3, ..SimConfig::default() };
    let objective = SimObjective::new(&space, vec![records], AsrmConfig::default(), &BaselineConfig::default(), sim)?;
    let result = tune(&space, &objective, 0.05, 24, 3)?;
    for (p, v) in space.params.iter().zip(&result.theta_star) {
        println!("{:<20} {v:.3}", p.name);
    }
    println!("loss {:.4} after {} evaluations", result.loss_star, result.trajectory.len());
    Ok(())
}
