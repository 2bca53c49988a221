//! On-disk layout of run directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use udn_core::experiment::{RegressionExperiment, RegressionSummary, SpiralExperiment, SpiralSummary};
use udn_core::{RunRecord, TruncatedPoissonDist};

use crate::error::{io_error, CliError};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralArtifact {
    pub schema_version: u32,
    pub kind: String,
    pub model: String,
    pub config: SpiralExperiment,
    pub result: SpiralSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressConfig {
    pub data: PathBuf,
    pub target: String,
    pub experiment: RegressionExperiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressArtifact {
    pub schema_version: u32,
    pub kind: String,
    pub model: String,
    pub config: RegressConfig,
    pub result: RegressionSummary,
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    write(path, text + "\n")
}

/// `epoch,lambda,m_q,posterior_mean_depth` for every logged epoch.
pub fn lambda_trajectory_csv(record: &RunRecord, delta: f64) -> Result<String, CliError> {
    let mut out = String::from("epoch,lambda,m_q,posterior_mean_depth\n");
    for e in &record.entries {
        let mean = TruncatedPoissonDist::over_depths(e.lambda, delta)?.mean();
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.lambda, e.m_q, mean));
    }
    Ok(out)
}

/// Every `summary.json` directly below `root` that parses as `T`.
pub fn collect<T: for<'de> Deserialize<'de>>(root: &Path, kind: &str) -> Result<Vec<(PathBuf, T)>, CliError> {
    let mut found = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| io_error(root, e))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        let path = dir.join("summary.json");
        let Ok(text) = fs::read_to_string(&path) else { continue };
        let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) else { continue };
        if value.get("kind").and_then(|k| k.as_str()) != Some(kind) {
            continue;
        }
        let parsed = serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        found.push((dir, parsed));
    }
    Ok(found)
}
