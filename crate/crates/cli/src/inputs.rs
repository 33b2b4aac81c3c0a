//! Loading and writing of the files the subcommands exchange.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use situate_core::data_io::{load_scenes, SituationSpec};
use situate_core::engine::EngineConfig;
use situate_core::features::{FeatureProvider, FeatureStore, OracleConfig, OracleFeatures};

use crate::error::CliError;

pub const ORACLE_DOC_TYPE: &str = "oracle_features";
pub const MANIFEST_TYPE: &str = "synthetic_corpus";
pub const DOC_VERSION: u32 = 1;

/// Points the oracle feature provider at a scenes file, relative to this document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDoc {
    #[serde(rename = "type")]
    pub kind: String,
    pub version: u32,
    pub config: OracleConfig,
    pub scenes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "type")]
    pub kind: String,
    pub version: u32,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub role: String,
    pub path: String,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::io(path.display(), e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("documents serialize") + "\n"
}

pub fn load_situation(path: &Path) -> Result<SituationSpec, CliError> {
    with_path(path, SituationSpec::load(path))
}

/// Prefixes a failure with the file it concerns.
pub fn with_path<T, E: Into<CliError>>(path: &Path, r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| match e.into() {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
    })
}

/// Oracle document (`.json`) or binary feature store (anything else).
pub fn load_features(path: &Path) -> Result<Box<dyn FeatureProvider>, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        let doc: OracleDoc = parse_json(path)?;
        if doc.kind != ORACLE_DOC_TYPE || doc.version != DOC_VERSION {
            return Err(CliError::Io(format!(
                "{}: expected {ORACLE_DOC_TYPE} v{DOC_VERSION}, got {} v{}",
                path.display(),
                doc.kind,
                doc.version
            )));
        }
        let scenes_path = sibling(path, &doc.scenes);
        let scenes = with_path(&scenes_path, load_scenes(&scenes_path))?;
        Ok(Box::new(with_path(path, OracleFeatures::new(doc.config, scenes))?))
    } else {
        Ok(Box::new(with_path(path, FeatureStore::load(path))?))
    }
}

/// `rel` resolved against the directory holding `doc`.
pub fn sibling(doc: &Path, rel: &str) -> PathBuf {
    doc.parent().unwrap_or(Path::new(".")).join(rel)
}

/// Engine settings: defaults, then the config file, then individual flags.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct EngineArgs {
    /// JSON file with engine settings; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Prior agents per category
    #[arg(long)]
    pub p: Option<usize>,
    /// Initial explorer agents
    #[arg(long = "p-prime")]
    pub p_prime: Option<usize>,
    #[arg(long = "tau-refine")]
    pub tau_refine: Option<f64>,
    #[arg(long = "tau-detect")]
    pub tau_detect: Option<f64>,
    /// Internal support weight; the external weight becomes 1 - w_int
    #[arg(long = "w-int")]
    pub w_int: Option<f64>,
    /// Sample boxes uniformly and ignore the relationship model
    #[arg(long)]
    pub uniform: bool,
}

impl EngineArgs {
    pub fn resolve(&self, seed: Option<u64>) -> Result<EngineConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
            None => EngineConfig::default(),
        };
        if let Some(v) = self.max_iter {
            c.max_iterations = v;
        }
        if let Some(v) = self.p {
            c.p = v;
        }
        if let Some(v) = self.p_prime {
            c.p_prime = v;
        }
        if let Some(v) = self.tau_refine {
            c.tau_refine = v;
        }
        if let Some(v) = self.tau_detect {
            c.tau_detect = v;
        }
        if let Some(v) = self.w_int {
            c = c.with_w_int(v);
        }
        if self.uniform {
            c.uniform_mode = true;
        }
        if let Some(s) = seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}
