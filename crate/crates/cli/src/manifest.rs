//! `manifest.json`: what a run was asked to do, written before it starts.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::data::{combined_digest, InputDigest};
use crate::settings::Settings;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub args: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub settings: BTreeMap<String, String>,
    pub input_digest: String,
    pub inputs: Vec<InputDigest>,
}

impl Manifest {
    pub fn new(command: &str, settings: &Settings, inputs: Vec<InputDigest>) -> Self {
        let kv = settings.to_kv();
        let text = kv.to_text();
        let map = text
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            args: std::env::args().skip(1).collect(),
            seed: settings.seed,
            threads: settings.threads,
            settings: map,
            input_digest: combined_digest(&inputs),
            inputs,
        }
    }

    /// Writes `manifest.json` and the effective `settings.conf` into `dir`.
    pub fn write(&self, dir: &Path, settings: &Settings) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("manifest.json"), json + "\n")?;
        std::fs::write(dir.join("settings.conf"), settings.to_kv().to_text())?;
        Ok(())
    }
}
