//! Run manifests: everything needed to reproduce a run plus its timings
//! and final metrics. Timing fields vary between otherwise identical
//! runs; strip them before comparing manifests for reproducibility.

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub iterations: usize,
    pub converged: bool,
    pub final_dkl: Option<f64>,
    pub final_residual: Option<f64>,
    pub flags: Vec<String>,
    pub timing: ManifestTiming,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestTiming {
    pub started_unix_ms: u128,
    pub total_seconds: f64,
    pub median_iter_millis: f64,
    pub iter_millis: Vec<f64>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json)
    }
}
