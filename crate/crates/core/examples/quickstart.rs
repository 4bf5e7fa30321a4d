//! Generate a trace, run ASRM on it and print a few headline numbers.

use asrm::engine::{run, SimConfig};
use asrm::metrics::{evaluate, CostModel};
use asrm::policy::{Asrm, AsrmConfig, FixedKeepalive};
use asrm::workloads::WorkloadSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trace = WorkloadSpec::uniform_default().generate(1)?;
    let sim = SimConfig { seed: 1, ..SimConfig::default() };

    let mut asrm = Asrm::new(AsrmConfig::default())?;
    let report = run(&trace.records, &mut asrm, &sim)?;
    let mut fixed = FixedKeepalive::new(60_000);
    let baseline = run(&trace.records, &mut fixed, &sim)?;

    let m = evaluate(&report, &baseline, &CostModel::default())?;
    println!("requests     {}", m.requests);
    println!("cold starts  {} (baseline {})", m.cold_starts, baseline.cold_starts());
    println!("csrr {:.3}  rue {:.3}  arl {:.3}  cpi {:.3}", m.csrr, m.rue, m.arl, m.cpi);
    println!("digest       {}", report.digest);
    Ok(())
}
