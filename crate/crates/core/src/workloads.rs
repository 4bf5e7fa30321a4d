//! Seeded synthetic traces and the trace CSV format.
//!
//! CSV header: `request_id,function_id,arrival_ms,service_ms,memory_gb,f0..f{d-1}`.
//! A sidecar `<trace>.meta.json` records the generator, its parameters and the seed.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Pareto};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Millis, RequestRecord};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: arrival earlier than the previous row")]
    UnsortedTrace { line: u64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

/// Service-time distribution shared by all generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceModel {
    /// Mean of the exponential service time, ms.
    pub exec_mean_ms: f64,
    /// Fraction of requests drawn from the slow mode instead (0 disables it).
    pub slow_fraction: f64,
    pub slow_mean_ms: f64,
    pub memory_gb: f64,
    /// Standard deviation of the noise on the log-service-time feature.
    pub feature_noise: f64,
}

impl Default for ServiceModel {
    fn default() -> Self {
        ServiceModel {
            exec_mean_ms: 100.0,
            slow_fraction: 0.0,
            slow_mean_ms: 5000.0,
            memory_gb: 0.5,
            feature_noise: 0.25,
        }
    }
}

impl ServiceModel {
    /// Ninety percent fast requests and ten percent requests fifty times slower.
    pub fn bimodal(exec_mean_ms: f64) -> Self {
        ServiceModel {
            exec_mean_ms,
            slow_fraction: 0.1,
            slow_mean_ms: exec_mean_ms * 50.0,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.exec_mean_ms > 0.0 && self.slow_mean_ms > 0.0 && self.memory_gb > 0.0) {
            return Err(WorkloadError::BadParams("service means and memory must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.slow_fraction) || !(self.feature_noise >= 0.0) {
            return Err(WorkloadError::BadParams("slow_fraction must lie in [0, 1], noise >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum WorkloadSpec {
    UniformHighfreq {
        rate_per_s: f64,
        duration_ms: Millis,
        #[serde(default)]
        service: ServiceModel,
    },
    PeriodicBurst {
        base_rate: f64,
        burst_rate: f64,
        period_ms: Millis,
        duty: f64,
        duration_ms: Millis,
        #[serde(default)]
        service: ServiceModel,
    },
    IrregularSparse {
        mean_gap_ms: f64,
        pareto_alpha: f64,
        duration_ms: Millis,
        #[serde(default)]
        service: ServiceModel,
    },
}

impl WorkloadSpec {
    pub fn uniform_default() -> Self {
        WorkloadSpec::UniformHighfreq {
            rate_per_s: 100.0,
            duration_ms: 100_000,
            service: ServiceModel::default(),
        }
    }

    pub fn burst_default() -> Self {
        WorkloadSpec::PeriodicBurst {
            base_rate: 10.0,
            burst_rate: 500.0,
            period_ms: 60_000,
            duty: 0.1,
            duration_ms: 300_000,
            service: ServiceModel::default(),
        }
    }

    pub fn sparse_default() -> Self {
        WorkloadSpec::IrregularSparse {
            mean_gap_ms: 30_000.0,
            pareto_alpha: 1.5,
            duration_ms: 4 * 3_600_000,
            service: ServiceModel::default(),
        }
    }

    /// Default spec for a family name: `uniform`, `burst` or `sparse`.
    pub fn family(name: &str) -> Option<Self> {
        match name {
            "uniform" => Some(Self::uniform_default()),
            "burst" => Some(Self::burst_default()),
            "sparse" => Some(Self::sparse_default()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WorkloadSpec::UniformHighfreq { .. } => "uniform_highfreq",
            WorkloadSpec::PeriodicBurst { .. } => "periodic_burst",
            WorkloadSpec::IrregularSparse { .. } => "irregular_sparse",
        }
    }

    pub fn service_mut(&mut self) -> &mut ServiceModel {
        match self {
            WorkloadSpec::UniformHighfreq { service, .. }
            | WorkloadSpec::PeriodicBurst { service, .. }
            | WorkloadSpec::IrregularSparse { service, .. } => service,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<TraceFile, WorkloadError> {
        match self {
            WorkloadSpec::UniformHighfreq { rate_per_s, duration_ms, service } => {
                gen_uniform_highfreq(*rate_per_s, *duration_ms, service, seed)
            }
            WorkloadSpec::PeriodicBurst { base_rate, burst_rate, period_ms, duty, duration_ms, service } => {
                gen_periodic_burst(*base_rate, *burst_rate, *period_ms, *duty, *duration_ms, service, seed)
            }
            WorkloadSpec::IrregularSparse { mean_gap_ms, pareto_alpha, duration_ms, service } => {
                gen_irregular_sparse(*mean_gap_ms, *pareto_alpha, *duration_ms, service, seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: Option<u64>,
    pub spec: Option<WorkloadSpec>,
    pub feature_dim: usize,
    pub requests: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub records: Vec<RequestRecord>,
    pub meta: TraceMeta,
}

impl TraceFile {
    pub fn from_records(records: Vec<RequestRecord>) -> Self {
        let feature_dim = records.first().map_or(0, |r| r.features.len());
        let requests = records.len();
        TraceFile {
            records,
            meta: TraceMeta { seed: None, spec: None, feature_dim, requests },
        }
    }
}

const FUNCTION_ID: &str = "fn-0";

struct Builder {
    rng: ChaCha8Rng,
    service: ServiceModel,
    fast: Exp<f64>,
    slow: Exp<f64>,
    noise: Normal<f64>,
    records: Vec<RequestRecord>,
}

impl Builder {
    fn new(service: &ServiceModel, seed: u64) -> Result<Self, WorkloadError> {
        service.validate()?;
        let bad = |e: String| WorkloadError::BadParams(e);
        Ok(Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            fast: Exp::new(1.0 / service.exec_mean_ms).map_err(|e| bad(e.to_string()))?,
            slow: Exp::new(1.0 / service.slow_mean_ms).map_err(|e| bad(e.to_string()))?,
            noise: Normal::new(0.0, service.feature_noise).map_err(|e| bad(e.to_string()))?,
            service: service.clone(),
            records: Vec::new(),
        })
    }

    fn push(&mut self, arrival_ms: f64) {
        let slow = self.service.slow_fraction > 0.0 && self.rng.random_bool(self.service.slow_fraction);
        let draw = if slow { self.slow.sample(&mut self.rng) } else { self.fast.sample(&mut self.rng) };
        let service = (draw.ceil() as Millis).max(1);
        let feature = (service as f64).ln() + self.noise.sample(&mut self.rng);
        let id = self.records.len() as u64;
        self.records.push(RequestRecord::new(
            id,
            FUNCTION_ID,
            arrival_ms.floor() as Millis,
            service,
            self.service.memory_gb,
            vec![feature, self.service.memory_gb],
        ));
    }

    fn finish(self, spec: WorkloadSpec, seed: u64) -> TraceFile {
        let requests = self.records.len();
        TraceFile {
            records: self.records,
            meta: TraceMeta {
                seed: Some(seed),
                spec: Some(spec),
                feature_dim: 2,
                requests,
            },
        }
    }
}

/// Homogeneous Poisson arrivals.
pub fn gen_uniform_highfreq(rate_per_s: f64, duration_ms: Millis, service: &ServiceModel, seed: u64) -> Result<TraceFile, WorkloadError> {
    if !(rate_per_s > 0.0) || !rate_per_s.is_finite() {
        return Err(WorkloadError::BadParams("rate must be positive".into()));
    }
    let mut b = Builder::new(service, seed)?;
    let gap = Exp::new(rate_per_s / 1000.0).map_err(|e| WorkloadError::BadParams(e.to_string()))?;
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut b.rng);
        if t >= duration_ms as f64 {
            break;
        }
        b.push(t);
    }
    let spec = WorkloadSpec::UniformHighfreq { rate_per_s, duration_ms, service: service.clone() };
    Ok(b.finish(spec, seed))
}

/// Poisson arrivals at `burst_rate` during the leading `duty` fraction of
/// every period and at `base_rate` otherwise.
pub fn gen_periodic_burst(
    base_rate: f64,
    burst_rate: f64,
    period_ms: Millis,
    duty: f64,
    duration_ms: Millis,
    service: &ServiceModel,
    seed: u64,
) -> Result<TraceFile, WorkloadError> {
    if !(base_rate > 0.0 && burst_rate >= base_rate) || !burst_rate.is_finite() {
        return Err(WorkloadError::BadParams("need 0 < base_rate <= burst_rate".into()));
    }
    if !(duty > 0.0 && duty < 1.0) || period_ms == 0 {
        return Err(WorkloadError::BadParams("need 0 < duty < 1 and period > 0".into()));
    }
    let mut b = Builder::new(service, seed)?;
    let unit = Exp::new(1.0).map_err(|e| WorkloadError::BadParams(e.to_string()))?;
    let period = period_ms as f64;
    let burst_len = duty * period;
    let end = duration_ms as f64;
    let mut t = 0.0;
    while t < end {
        let phase = t % period;
        let (rate, boundary) = if phase < burst_len {
            (burst_rate, t - phase + burst_len)
        } else {
            (base_rate, t - phase + period)
        };
        // Memoryless: a gap crossing a rate boundary restarts there.
        let next = t + unit.sample(&mut b.rng) / (rate / 1000.0);
        if next >= boundary {
            t = boundary;
            continue;
        }
        t = next;
        if t < end {
            b.push(t);
        }
    }
    let spec = WorkloadSpec::PeriodicBurst {
        base_rate,
        burst_rate,
        period_ms,
        duty,
        duration_ms,
        service: service.clone(),
    };
    Ok(b.finish(spec, seed))
}

/// Renewal process with Pareto gaps of mean `mean_gap_ms`.
pub fn gen_irregular_sparse(
    mean_gap_ms: f64,
    pareto_alpha: f64,
    duration_ms: Millis,
    service: &ServiceModel,
    seed: u64,
) -> Result<TraceFile, WorkloadError> {
    if !(pareto_alpha > 1.0) || !(mean_gap_ms > 0.0) || !pareto_alpha.is_finite() {
        return Err(WorkloadError::BadParams("need pareto_alpha > 1 and mean_gap_ms > 0".into()));
    }
    let mut b = Builder::new(service, seed)?;
    let scale = mean_gap_ms * (pareto_alpha - 1.0) / pareto_alpha;
    let gap = Pareto::new(scale, pareto_alpha).map_err(|e| WorkloadError::BadParams(e.to_string()))?;
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut b.rng);
        if t >= duration_ms as f64 {
            break;
        }
        b.push(t);
    }
    let spec = WorkloadSpec::IrregularSparse {
        mean_gap_ms,
        pareto_alpha,
        duration_ms,
        service: service.clone(),
    };
    Ok(b.finish(spec, seed))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

/// Writes the CSV in the documented format.
pub fn write_csv<W: Write>(records: &[RequestRecord], out: W) -> Result<(), WorkloadError> {
    let dim = records.first().map_or(0, |r| r.features.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["request_id", "function_id", "arrival_ms", "service_ms", "memory_gb"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(csv_io)?;
    for r in records {
        if r.features.len() != dim {
            return Err(WorkloadError::BadParams(format!("request {} has {} features, expected {dim}", r.id, r.features.len())));
        }
        let mut row = vec![
            r.id.to_string(),
            r.function_id.clone(),
            r.arrival_time.to_string(),
            r.service_time.to_string(),
            r.memory_gb.to_string(),
        ];
        row.extend(r.features.iter().map(|f| f.to_string()));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> WorkloadError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => WorkloadError::Io(io),
        other => WorkloadError::Parse { line: 0, msg: format!("{other:?}") },
    }
}

/// Parses the CSV, rejecting malformed and out-of-order rows.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<RequestRecord>, WorkloadError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| WorkloadError::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let fixed = ["request_id", "function_id", "arrival_ms", "service_ms", "memory_gb"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(a, b)| a != b) {
        return Err(WorkloadError::Parse { line: 1, msg: format!("header must start with {}", fixed.join(",")) });
    }
    for (i, name) in header.iter().skip(fixed.len()).enumerate() {
        if name != format!("f{i}") {
            return Err(WorkloadError::Parse { line: 1, msg: format!("expected feature column f{i}, found {name:?}") });
        }
    }
    let width = header.len();
    let mut out = Vec::new();
    let mut prev = 0;
    for row in rdr.records() {
        let row = row.map_err(|e| WorkloadError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |msg: String| WorkloadError::Parse { line, msg };
        if row.len() != width {
            return Err(err(format!("expected {width} columns, found {}", row.len())));
        }
        let int = |i: usize| row[i].parse::<u64>().map_err(|e| err(format!("column {}: {e}", header[i].to_string())));
        let float = |i: usize| row[i].parse::<f64>().map_err(|e| err(format!("column {}: {e}", header[i].to_string())));
        let id = int(0)?;
        let arrival = int(2)?;
        let service = int(3)?;
        let memory = float(4)?;
        let features = (fixed.len()..width).map(float).collect::<Result<Vec<_>, _>>()?;
        if arrival < prev {
            return Err(WorkloadError::UnsortedTrace { line });
        }
        prev = arrival;
        let rec = RequestRecord::new(id, &row[1], arrival, service, memory, features);
        rec.validate().map_err(|e| err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_trace(trace: &TraceFile, path: &Path) -> Result<(), WorkloadError> {
    write_csv(&trace.records, BufWriter::new(File::create(path)?))?;
    let meta = serde_json::to_string_pretty(&trace.meta)?;
    std::fs::write(meta_path(path), meta + "\n")?;
    Ok(())
}

/// Reads a trace and, if present, its sidecar metadata.
pub fn load_trace(path: &Path) -> Result<TraceFile, WorkloadError> {
    let records = read_csv(File::open(path)?)?;
    let meta_file = meta_path(path);
    let meta = if meta_file.exists() {
        serde_json::from_str(&std::fs::read_to_string(meta_file)?)?
    } else {
        TraceFile::from_records(Vec::new()).meta
    };
    let mut t = TraceFile::from_records(records);
    t.meta.seed = meta.seed;
    t.meta.spec = meta.spec;
    Ok(t)
}
