use std::collections::BTreeSet;
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::engine::SimConfig;
use crate::gateway::SamplerConfig;
use crate::metrics::CostModel;
use crate::policy::{AsrmConfig, BaselineConfig};
use crate::preprocess::PreprocessConfig;

/// Gateway-only settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ServeOptions {
    pub default_service_ms: u64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { default_service_ms: 10 }
    }
}

/// Every tunable of every subcommand, read from one flat JSON object. A key
/// shared by two sections (only `billing_granularity`) sets both.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub asrm: AsrmConfig,
    pub baseline: BaselineConfig,
    pub sim: SimConfig,
    pub cost: CostModel,
    pub preprocess: PreprocessConfig,
    pub sampler: SamplerConfig,
    pub serve: ServeOptions,
}

fn keys_of<T: Serialize + Default>() -> BTreeSet<String> {
    match serde_json::to_value(T::default()) {
        Ok(Value::Object(m)) => m.into_iter().map(|(k, _)| k).collect(),
        _ => BTreeSet::new(),
    }
}

fn section<T: DeserializeOwned + Serialize + Default>(all: &Map<String, Value>) -> Result<T, CliError> {
    let keys = keys_of::<T>();
    let subset: Map<String, Value> = all
        .iter()
        .filter(|(k, _)| keys.contains(k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    serde_json::from_value(Value::Object(subset)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn insert_all<T: Serialize>(out: &mut Map<String, Value>, v: &T) {
    if let Ok(Value::Object(m)) = serde_json::to_value(v) {
        out.extend(m);
    }
}

impl RunConfig {
    pub fn known_keys() -> BTreeSet<String> {
        let mut k = keys_of::<AsrmConfig>();
        k.extend(keys_of::<BaselineConfig>());
        k.extend(keys_of::<SimConfig>());
        k.extend(keys_of::<CostModel>());
        k.extend(keys_of::<PreprocessConfig>());
        k.extend(keys_of::<SamplerConfig>());
        k.extend(keys_of::<ServeOptions>());
        k
    }

    pub fn from_value(value: Value) -> Result<Self, CliError> {
        let Value::Object(all) = value else {
            return Err(CliError::Usage("config must be a JSON object".into()));
        };
        let known = Self::known_keys();
        if let Some(unknown) = all.keys().find(|k| !known.contains(k.as_str())) {
            return Err(CliError::Usage(format!("config: unknown key {unknown:?}")));
        }
        let cfg = RunConfig {
            asrm: section(&all)?,
            baseline: section(&all)?,
            sim: section(&all)?,
            cost: section(&all)?,
            preprocess: section(&all)?,
            sampler: section(&all)?,
            serve: section(&all)?,
        };
        cfg.asrm.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.baseline.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.sim.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.cost.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let v: Value = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        Self::from_value(v)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    /// Flat object of every effective value, keys sorted.
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        insert_all(&mut m, &self.asrm);
        insert_all(&mut m, &self.baseline);
        insert_all(&mut m, &self.sim);
        insert_all(&mut m, &self.cost);
        insert_all(&mut m, &self.preprocess);
        insert_all(&mut m, &self.sampler);
        insert_all(&mut m, &self.serve);
        Value::Object(m)
    }

    /// Hex SHA-256 of the canonical JSON, first 16 digits.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_value().to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
