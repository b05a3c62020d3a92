use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Completed,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub status: gmd_core::trainer::RunStatus,
    pub wall_time_s: f64,
}

/// `manifest.json`: what ran, on which config, and how it ended.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: serde_json::Value,
    /// SHA-256 of each config section's canonical JSON.
    pub section_hashes: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<SeedEntry>,
    pub wall_time_s: f64,
    pub files: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Result<Self> {
        let sections = cfg.sections()?;
        let section_hashes = sections
            .iter()
            .map(|(k, v)| (k.to_string(), sha256_hex(v.to_string().as_bytes())))
            .collect();
        Ok(Manifest {
            command: command.to_string(),
            status: Status::Completed,
            error: None,
            config: serde_json::to_value(cfg).map_err(gmd_core::Error::from)?,
            section_hashes,
            versions: BTreeMap::from([
                ("gmd-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                ("gmd-core".to_string(), gmd_core::VERSION.to_string()),
            ]),
            seeds: Vec::new(),
            wall_time_s: 0.0,
            files: Vec::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self).map_err(gmd_core::Error::from)? + "\n")
    }
}
