//! Round-trip a generated trace through CSV and its metadata sidecar.

use asrm::workloads::{load_trace, meta_path, save_trace, WorkloadSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("asrm-trace-io");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("sparse.csv");

    let trace = WorkloadSpec::sparse_default().generate(5)?;
    save_trace(&trace, &path)?;
    let back = load_trace(&path)?;
    assert_eq!(back.records, trace.records);

    println!("{} requests written to {}", back.records.len(), path.display());
    println!("metadata in {}", meta_path(&path).display());
    for r in back.records.iter().take(3) {
        println!("{:>3} arrive {:>8} ms  service {:>4} ms  {:.2} GB", r.id, r.arrival_time, r.service_time, r.memory_gb);
    }
    Ok(())
}
