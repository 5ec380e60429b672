//! Experiment manifest: one JSON document listing every artifact a run of
//! commands produced, keyed by the path it was written to.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use safeocc::control::{PidGains, Scenario};
use safeocc::detector::{DetectorConfig, GammaTrial};
use safeocc::io::{dataset_files, write_atomic};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvEntry {
    pub env: String,
    pub size: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub hash: String,
    pub env: String,
    pub count: usize,
    /// Train, validation and test sizes; the indices live in `dataset.json`.
    pub split_sizes: [usize; 3],
    pub augmented: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEntry {
    pub hash: String,
    pub dataset: String,
    pub arch: String,
    /// Disturbance kinds present in the training data; distinguishes the
    /// members of a sensor roster.
    pub trained_on: Vec<String>,
    pub learning_rate: f64,
    pub best_epoch: usize,
    pub history: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEntry {
    pub hash: String,
    pub sensor: String,
    pub dataset: String,
    pub config: DetectorConfig,
    pub gamma_trials: Option<Vec<GammaTrial>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationEntry {
    pub sensor: String,
    pub detector: Option<String>,
    pub scenario: Scenario,
    pub steps: usize,
    pub terminated: bool,
    pub alarm_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub envs: BTreeMap<String, EnvEntry>,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetEntry>,
    #[serde(default)]
    pub sensors: BTreeMap<String, SensorEntry>,
    #[serde(default)]
    pub detectors: BTreeMap<String, DetectorEntry>,
    #[serde(default)]
    pub evaluations: BTreeMap<String, OutputEntry>,
    #[serde(default)]
    pub grids: BTreeMap<String, OutputEntry>,
    #[serde(default)]
    pub controller: Option<PidGains>,
    #[serde(default)]
    pub simulations: BTreeMap<String, SimulationEntry>,
}

impl Manifest {
    pub fn new(seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            envs: BTreeMap::new(),
            datasets: BTreeMap::new(),
            sensors: BTreeMap::new(),
            detectors: BTreeMap::new(),
            evaluations: BTreeMap::new(),
            grids: BTreeMap::new(),
            controller: None,
            simulations: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> CliResult<Option<Self>> {
        match std::fs::read(path) {
            Ok(bytes) => {
                let m: Manifest = serde_json::from_slice(&bytes)
                    .map_err(|e| CliError::validation(format!("manifest {}: {e}", path.display())))?;
                if m.schema_version != SCHEMA_VERSION {
                    return Err(CliError::validation(format!("manifest schema {} is unsupported", m.schema_version)));
                }
                Ok(Some(m))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)?;
        Ok(())
    }

    /// Every referenced artifact, resolved against the manifest's directory.
    pub fn referenced_files(&self, base: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for k in self.datasets.keys() {
            out.extend(dataset_files(&base.join(k)));
        }
        for (k, s) in &self.sensors {
            out.push(base.join(k));
            out.push(base.join(&s.history));
        }
        out.extend(self.detectors.keys().map(|k| base.join(k)));
        for e in self.evaluations.values().chain(self.grids.values()) {
            out.extend(e.outputs.iter().map(|o| base.join(o)));
        }
        out.extend(self.simulations.keys().map(|k| base.join(k)));
        out
    }

    /// Checks that every referenced file exists.
    pub fn validate(&self, base: &Path) -> CliResult<()> {
        match self.referenced_files(base).into_iter().find(|p| !p.exists()) {
            Some(p) => Err(CliError::missing(&p)),
            None => Ok(()),
        }
    }
}

/// Manifest key for an artifact: its path relative to the manifest's
/// directory when it lies below it, otherwise the path as given.
pub fn artifact_key(manifest: &Path, artifact: &Path) -> String {
    let base = manifest.parent().filter(|b| !b.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (b, a) = (abs(base), abs(artifact));
    a.strip_prefix(&b).map(|r| r.to_path_buf()).unwrap_or(a).to_string_lossy().replace('\\', "/")
}
