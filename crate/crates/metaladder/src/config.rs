//! Pipeline configuration (TOML with `${VAR}` environment interpolation)
//! and the per-run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotator::TeacherConfig;
use crate::composer::CompositionFormat;
use crate::error::{Error, Result};
use crate::inference::StudentConfig;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct PathsConfig {
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct PipelineConfig {
    #[serde(default)]
    pub teacher: Option<TeacherConfig>,
    #[serde(default)]
    pub student: Option<StudentConfig>,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub formats: Vec<CompositionFormat>,
    #[serde(default)]
    pub evolve_rounds: u32,
}

/// Replace `${VAR}` with the environment value; unset variables are an
/// error so secrets never silently become empty strings.
pub fn interpolate_env(text: &str) -> Result<String> {
    let re = regex::Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap();
    let mut missing = Vec::new();
    let out = re.replace_all(text, |caps: &regex::Captures| {
        match std::env::var(&caps[1]) {
            Ok(v) => v,
            Err(_) => {
                missing.push(caps[1].to_string());
                String::new()
            }
        }
    });
    if missing.is_empty() {
        Ok(out.into_owned())
    } else {
        Err(Error::Config(format!(
            "unset environment variable(s) in config: {}",
            missing.join(", ")
        )))
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let interpolated = interpolate_env(&raw)?;
        toml::from_str(&interpolated).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Written into the work dir on every run: the argv, the resolved config,
/// input digests, and the tool version. Deliberately clock-free so reruns
/// produce identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub input_digests: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

impl RunManifest {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config: None,
            input_digests: BTreeMap::new(),
        }
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.config = Some(serde_json::to_value(config)?);
        Ok(())
    }

    pub fn digest_input(&mut self, path: &Path) -> Result<()> {
        self.input_digests
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, work_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, e))?;
        let path = work_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
