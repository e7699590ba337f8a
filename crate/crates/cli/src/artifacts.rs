//! On-disk artifacts. Every file is written to a temporary sibling and
//! renamed into place, and the manifest is written last, so a run that exits
//! 0 never leaves a half-written file behind.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mars_core::interpolate::GpHyper;
use mars_core::scorenet::ScoreNetDocument;
use mars_core::{MeasurementDistribution, ScoreNetworkParams, Standardizer};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::pipeline::Variant;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Usage(format!("cannot write in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.flush())
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// A trained score network with everything needed to use it on new data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub interpolator: String,
    pub variant: Variant,
    pub gp: GpHyper,
    pub standardizer: Standardizer,
    pub hypercube: MeasurementDistribution,
    pub network: ScoreNetDocument,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<(Self, ScoreNetworkParams), CliError> {
        let model: ModelFile = read_json(path)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(CliError::Usage(format!(
                "{}: unsupported model format {}",
                path.display(),
                model.format_version
            )));
        }
        let params = ScoreNetworkParams::from_document(&model.network)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if model.standardizer.input_dim() != model.hypercube.dim() {
            return Err(CliError::Usage(format!(
                "{}: standardizer and hypercube disagree",
                path.display()
            )));
        }
        Ok((model, params))
    }

    pub fn input_dim(&self) -> usize {
        self.hypercube.dim()
    }
}

/// Self-description of one command invocation.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub stage_seconds: BTreeMap<String, f64>,
    pub summary: serde_json::Value,
}

/// Collects artifacts and stage timings while a command runs.
pub struct Run {
    out_dir: PathBuf,
    manifest: Manifest,
    stage_start: Instant,
}

impl Run {
    pub fn new(command: &str, out_dir: &Path, seeds: Vec<u64>, config: &impl Serialize) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Run {
            out_dir: out_dir.to_path_buf(),
            manifest: Manifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION"),
                seeds,
                config: serde_json::to_value(config).map_err(|e| CliError::Usage(e.to_string()))?,
                artifacts: Vec::new(),
                stage_seconds: BTreeMap::new(),
                summary: serde_json::Value::Null,
            },
            stage_start: Instant::now(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Records the time since the previous stage ended.
    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        *self.manifest.stage_seconds.entry(name.into()).or_default() += (now - self.stage_start).as_secs_f64();
        self.stage_start = now;
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        write_atomic(&path, bytes)?;
        self.manifest.artifacts.push(name.into());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        write_json(&path, value)?;
        self.manifest.artifacts.push(name.into());
        Ok(path)
    }

    pub fn set_summary(&mut self, summary: impl Serialize) -> Result<(), CliError> {
        self.manifest.summary = serde_json::to_value(summary).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn finish(self) -> Result<Manifest, CliError> {
        write_json(&self.out_dir.join(MANIFEST_FILE), &self.manifest)?;
        Ok(self.manifest)
    }
}
