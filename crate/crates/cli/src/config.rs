//! Config files and run records.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use foldmenu::{DgpConfig, EstimationConfig, TaxParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const RUN_RECORD: &str = "run.toml";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub dgp: DgpConfig,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub estimation: Option<EstimationConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginRow {
    pub label: String,
    #[serde(flatten)]
    pub tax: TaxParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginsConfig {
    pub rows: Vec<MarginRow>,
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => load_required(p),
    }
}

pub fn load_required<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Everything needed to rerun a command.
#[derive(Serialize)]
pub struct RunRecord<'a, T: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub config: &'a T,
}

pub fn write_record<T: Serialize>(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    inputs: &[&Path],
    config: &T,
) -> Result<()> {
    let record = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        config,
    };
    let text = toml::to_string_pretty(&record).context("serializing run record")?;
    fs::write(out.join(RUN_RECORD), text).with_context(|| format!("writing {}", out.join(RUN_RECORD).display()))
}
