//! Live service mode: the ASRM policy driven by wall-clock time behind a
//! line-delimited JSON protocol over TCP.

mod protocol;
mod sampler;
mod server;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use protocol::{err_line, failure_line, ok_line, parse_line, ParseFailure, WireRequest};
pub use sampler::{trace_hash, SamplerConfig, TraceSampler};
pub use server::{Gateway, GatewayStats, SubmitOutcome};

use crate::domain::Millis;
use crate::policy::AsrmConfig;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error("internal state error: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub bind: String,
    pub asrm: AsrmConfig,
    /// Wall-clock cold start of the sleep executor.
    pub cold_start_ms: Millis,
    /// Service time used when a submission carries no hint.
    pub default_service_ms: Millis,
    pub sampler: SamplerConfig,
    pub history_capacity: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            bind: "127.0.0.1:7070".into(),
            asrm: AsrmConfig::default(),
            cold_start_ms: 500,
            default_service_ms: 10,
            sampler: SamplerConfig::default(),
            history_capacity: 1024,
        }
    }
}

/// Binds and serves until a client sends `shutdown`.
pub fn serve(cfg: GatewayConfig) -> Result<(), GatewayError> {
    Gateway::bind(cfg)?.run()
}
