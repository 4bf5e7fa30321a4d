//! Adaptive serverless resource management: a deterministic discrete-event
//! simulator, keep-alive and admission policies, evaluation metrics,
//! workload generators, a parameter tuner and a live TCP gateway.

pub mod domain;
pub mod engine;
pub mod predictor;
pub mod policy;
pub mod metrics;
pub mod workloads;
pub mod preprocess;
pub mod tuner;
pub mod gateway;
pub mod cli;
