//! Every policy on every generated family, printed as the comparison CSV.

use asrm::cli::{compare, table_csv, NamedTrace, RunConfig};
use asrm::policy::PolicyKind;
use asrm::workloads::WorkloadSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut traces = Vec::new();
    for family in ["uniform", "burst", "sparse"] {
        let spec = WorkloadSpec::family(family).ok_or("unknown family")?;
        traces.push(NamedTrace { name: family.into(), seed: 1, records: spec.generate(1)?.records });
    }
    let cmp = compare(&traces, &PolicyKind::ALL, &RunConfig::default())?;
    print!("{}", table_csv(&cmp.rows)?);
    Ok(())
}
