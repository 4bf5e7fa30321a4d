//! The `asrm` command line: generate traces, simulate, compare policies,
//! preprocess, tune, serve and report.

mod compare;
mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use compare::{compare, convergence_csv, simulate, table_csv, Comparison, ComparisonRow, ConvergencePoint, NamedTrace};
pub use config::{RunConfig, ServeOptions};

use crate::engine::SimReport;
use crate::gateway::{self, GatewayConfig};
use crate::metrics::{self, MetricsReport};
use crate::policy::PolicyKind;
use crate::preprocess;
use crate::tuner::{self, ParamSpace, SimObjective};
use crate::workloads::{self, TraceFile, WorkloadSpec};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or config values; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or inconsistent data, or a failed run; exit code 1.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "asrm", version, about = "Adaptive serverless resource manager")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Flat JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file or directory; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic trace CSV and its metadata sidecar.
    Generate {
        /// uniform, burst or sparse.
        #[arg(long, default_value = "uniform")]
        family: String,
        /// JSON workload spec; overrides --family.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one policy over one trace.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "asrm")]
        policy: PolicyKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Compare policies over traces and generated families.
    Compare {
        #[arg(long)]
        trace: Vec<PathBuf>,
        /// Generated family; repeatable, one trace per seed.
        #[arg(long)]
        family: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        policy: Vec<PolicyKind>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seed: Vec<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Binning, wavelet, clustering and PCA features of a trace.
    Preprocess {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Search ASRM parameters that maximise CPI against fixed keep-alive.
    Tune {
        #[arg(long)]
        trace: Vec<PathBuf>,
        #[arg(long)]
        family: Vec<String>,
        #[arg(long, default_value_t = 40)]
        budget: usize,
        #[arg(long, default_value_t = 0.0)]
        lambda_reg: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Serve the line-delimited JSON gateway.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: String,
        /// Overridden by the ASRM_CONFIG environment variable.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Metrics of saved simulation reports.
    Report {
        #[arg(long, required = true)]
        report: Vec<PathBuf>,
        /// Report CSRR and CPI are relative to; each report itself when absent.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub config_hash: String,
}

impl Provenance {
    fn new(command: &'static str, seed: Option<u64>, cfg: &RunConfig) -> Self {
        Provenance {
            tool: "asrm",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config_hash: cfg.hash(),
        }
    }

    fn csv_header(&self) -> String {
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        format!(
            "# {} {} command={} seed={} config_hash={}\n",
            self.tool, self.version, self.command, seed, self.config_hash
        )
    }
}

fn json_doc(prov: &Provenance, key: &str, body: impl Serialize) -> Result<String, CliError> {
    let mut doc = json!({ "provenance": prov });
    doc[key] = serde_json::to_value(body).map_err(data)?;
    serde_json::to_string_pretty(&doc).map(|s| s + "\n").map_err(data)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(data)?;
            }
            fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_in(dir: Option<&Path>, file: &str, text: &str) -> Result<(), CliError> {
    match dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(data)?;
            emit(Some(&d.join(file)), text)
        }
        None => emit(None, text),
    }
}

fn load(path: &Path) -> Result<TraceFile, CliError> {
    workloads::load_trace(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn family_spec(name: &str) -> Result<WorkloadSpec, CliError> {
    WorkloadSpec::family(name).ok_or_else(|| CliError::Usage(format!("unknown family {name:?} (uniform, burst, sparse)")))
}

fn gather_traces(files: &[PathBuf], families: &[String], seeds: &[u64]) -> Result<Vec<NamedTrace>, CliError> {
    let mut out = Vec::new();
    let first_seed = seeds.first().copied().unwrap_or(1);
    for f in files {
        let name = f.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
        out.push(NamedTrace {
            name,
            seed: first_seed,
            records: load(f)?.records,
        });
    }
    for fam in families {
        let spec = family_spec(fam)?;
        for &seed in seeds {
            out.push(NamedTrace {
                name: format!("{fam}-s{seed}"),
                seed,
                records: spec.generate(seed).map_err(data)?.records,
            });
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("give at least one --trace or --family".into()));
    }
    Ok(out)
}

fn requests_csv(report: &SimReport) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "request_id",
        "function_id",
        "arrival_ms",
        "start_ms",
        "completion_ms",
        "cold_start",
        "wait_ms",
        "rejected",
        "slot",
    ])
    .map_err(data)?;
    let opt = |v: Option<u64>| v.map_or(String::new(), |v| v.to_string());
    for r in &report.requests {
        w.write_record([
            r.id.to_string(),
            r.function_id.clone(),
            r.arrival.to_string(),
            opt(r.start),
            opt(r.completion),
            r.cold_start.to_string(),
            r.wait_ms.to_string(),
            r.rejected.to_string(),
            opt(r.slot),
        ])
        .map_err(data)?;
    }
    compare::finish(w)
}

fn metrics_csv(rows: &[MetricsReport]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy",
        "csrr",
        "rue",
        "arl",
        "cpi",
        "pas",
        "cost_total",
        "mean_latency",
        "cold_starts",
        "requests",
        "rejected",
    ])
    .map_err(data)?;
    for m in rows {
        w.write_record([
            m.policy.clone(),
            m.csrr.to_string(),
            m.rue.to_string(),
            m.arl.to_string(),
            m.cpi.to_string(),
            m.pas.map_or(String::new(), |p| p.to_string()),
            m.cost_total.to_string(),
            m.mean_latency.to_string(),
            m.cold_starts.to_string(),
            m.requests.to_string(),
            m.rejected.to_string(),
        ])
        .map_err(data)?;
    }
    compare::finish(w)
}

/// Reads a report written by `simulate`, or a bare report object.
pub fn read_report(path: &Path) -> Result<SimReport, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if let Some(inner) = v.get_mut("report") {
        v = inner.take();
    }
    serde_json::from_value(v).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Runs one parsed invocation.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { family, spec, seed, out } => {
            let spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("spec: {e}")))?
                }
                None => family_spec(&family)?,
            };
            let trace = spec.generate(seed).map_err(|e| CliError::Usage(e.to_string()))?;
            match out {
                Some(p) => {
                    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                        fs::create_dir_all(dir).map_err(data)?;
                    }
                    workloads::save_trace(&trace, &p).map_err(data)
                }
                None => workloads::write_csv(&trace.records, std::io::stdout().lock()).map_err(data),
            }
        }
        Command::Simulate { trace, policy, seed, common } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let records = load(&trace)?.records;
            let report = simulate(&records, policy, &cfg, seed)?;
            let prov = Provenance::new("simulate", Some(seed), &cfg);
            match common.format {
                Format::Json => emit(common.out.as_deref(), &json_doc(&prov, "report", &report)?),
                Format::Csv => emit(common.out.as_deref(), &(prov.csv_header() + &requests_csv(&report)?)),
            }
        }
        Command::Compare { trace, family, policy, seed, common } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let traces = gather_traces(&trace, &family, &seed)?;
            let kinds = if policy.is_empty() { PolicyKind::ALL.to_vec() } else { policy };
            let result = compare(&traces, &kinds, &cfg)?;
            let prov = Provenance::new("compare", seed.first().copied(), &cfg);
            let out = common.out.as_deref();
            match common.format {
                Format::Csv => {
                    emit_in(out, "compare.csv", &(prov.csv_header() + &table_csv(&result.rows)?))?;
                    if out.is_some() {
                        emit_in(out, "convergence.csv", &(prov.csv_header() + &convergence_csv(&result.convergence)?))?;
                    }
                    Ok(())
                }
                Format::Json => emit_in(out, "compare.json", &json_doc(&prov, "comparison", &result)?),
            }
        }
        Command::Preprocess { trace, common } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let records = load(&trace)?.records;
            let result = preprocess::run_pipeline(&records, &cfg.preprocess).map_err(data)?;
            let prov = Provenance::new("preprocess", None, &cfg);
            let out = common.out.as_deref();
            let features = {
                let mut w = csv::Writer::from_writer(Vec::new());
                let p = cfg.preprocess.pca_components;
                let mut header = vec!["request_id".to_string(), "bin".into(), "cluster".into(), "distance".into()];
                header.extend((0..p).map(|i| format!("pc{i}")));
                w.write_record(&header).map_err(data)?;
                for r in &result.rows {
                    let mut rec = vec![r.request_id.to_string(), r.bin.to_string(), r.cluster.to_string(), r.distance.to_string()];
                    rec.extend(r.projection.iter().map(|v| v.to_string()));
                    w.write_record(&rec).map_err(data)?;
                }
                prov.csv_header() + &compare::finish(w)?
            };
            let summary = json_doc(&prov, "summary", &result.summary)?;
            match (out, common.format) {
                (Some(_), _) => {
                    emit_in(out, "features.csv", &features)?;
                    emit_in(out, "summary.json", &summary)
                }
                (None, Format::Csv) => emit(None, &features),
                (None, Format::Json) => emit(None, &summary),
            }
        }
        Command::Tune { trace, family, budget, lambda_reg, seed, common } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let traces = gather_traces(&trace, &family, &[seed])?;
            let mut space = ParamSpace::asrm_default();
            space.profile.cold_start_base = cfg.sim.cold_start_base;
            space.profile.billing_granularity = cfg.asrm.billing_granularity;
            let workloads = traces.into_iter().map(|t| t.records).collect();
            let sim = crate::engine::SimConfig { seed, ..cfg.sim.clone() };
            let objective = SimObjective::new(&space, workloads, cfg.asrm.clone(), &cfg.baseline, sim).map_err(data)?;
            let result = tuner::tune(&space, &objective, lambda_reg, budget, seed).map_err(|e| match e {
                tuner::TunerError::ZeroBudget | tuner::TunerError::InvalidSpace(_) => CliError::Usage(e.to_string()),
                other => data(other),
            })?;
            let named: serde_json::Map<String, Value> = space
                .params
                .iter()
                .zip(&result.theta_star)
                .map(|(p, v)| (p.name.clone(), json!(v)))
                .collect();
            let prov = Provenance::new("tune", Some(seed), &cfg);
            let body = json!({
                "theta_star": named,
                "loss_star": result.loss_star,
                "trajectory": result.trajectory,
            });
            emit(common.out.as_deref(), &json_doc(&prov, "tune", body)?)
        }
        Command::Serve { bind, config } => {
            let path = std::env::var_os("ASRM_CONFIG").map(PathBuf::from).or(config);
            let cfg = RunConfig::load(path.as_deref())?;
            let gw = GatewayConfig {
                bind,
                asrm: cfg.asrm.clone(),
                cold_start_ms: cfg.sim.cold_start_base,
                default_service_ms: cfg.serve.default_service_ms,
                sampler: cfg.sampler,
                history_capacity: cfg.sim.history_capacity,
            };
            let gateway = gateway::Gateway::bind(gw).map_err(|e| match e {
                gateway::GatewayError::Config(_) => CliError::Usage(e.to_string()),
                other => data(other),
            })?;
            eprintln!("listening on {}", gateway.local_addr().map_err(data)?);
            gateway.run().map_err(data)
        }
        Command::Report { report, baseline, common } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let base = baseline.as_deref().map(read_report).transpose()?;
            let mut rows = Vec::new();
            for p in &report {
                let r = read_report(p)?;
                let m = metrics::evaluate(&r, base.as_ref().unwrap_or(&r), &cfg.cost)
                    .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                rows.push(m);
            }
            let prov = Provenance::new("report", None, &cfg);
            match common.format {
                Format::Json => emit(common.out.as_deref(), &json_doc(&prov, "metrics", &rows)?),
                Format::Csv => emit(common.out.as_deref(), &(prov.csv_header() + &metrics_csv(&rows)?)),
            }
        }
    }
}

/// Parses `args` (including the program name) and runs.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    execute(cli)
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // Help and version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let message = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": message }));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(e.exit_code())
        }
    }
}
