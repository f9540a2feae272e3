//! Engine configuration. Sources, lowest precedence first: the JSON config
//! file, command-line flags, then `REPLUG_LM_ENDPOINT`, `REPLUG_LM_TOKEN`
//! and `REPLUG_SEED`.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use replug_core::index::IndexMode;
use replug_core::lm::{ENDPOINT_ENV, TOKEN_ENV};
use replug_core::lsr::TrainingConfig;

use crate::error::CliError;

pub const SEED_ENV: &str = "REPLUG_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LmKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Exact,
    Approximate,
}

impl From<ModeArg> for IndexMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => IndexMode::Exact,
            ModeArg::Approximate => IndexMode::Approximate,
        }
    }
}

/// File form. Training hyperparameters sit at the top level next to the
/// engine settings; `in_flight` is shared by training and inference.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm: Option<LmKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_spec: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub continuation_len: Option<usize>,
    #[serde(flatten)]
    pub training: TrainingConfig,
}

/// Flag values; `None` leaves the config file's value in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub lm: Option<LmKind>,
    pub endpoint: Option<String>,
    pub mock_spec: Option<PathBuf>,
    pub context_window: Option<usize>,
    pub k: Option<usize>,
    pub query_window: Option<usize>,
    pub in_flight: Option<usize>,
    pub seed: Option<u64>,
    pub dim: Option<usize>,
    pub index_mode: Option<ModeArg>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub lm: LmKind,
    pub endpoint: Option<String>,
    pub token: Option<String>,
    pub mock_spec: Option<PathBuf>,
    pub context_window: usize,
    pub k: usize,
    pub query_window: usize,
    pub in_flight: usize,
    pub context_len: usize,
    pub continuation_len: usize,
    pub training: TrainingConfig,
}

impl Settings {
    pub fn seed(&self) -> u64 {
        self.training.seed
    }

    pub fn dim(&self) -> usize {
        self.training.dim
    }

    pub fn corpus(&self) -> Result<&Path, CliError> {
        self.corpus.as_deref().ok_or_else(|| CliError::Config("--corpus is required".into()))
    }
}

pub fn load_config(path: &Path) -> Result<EngineConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

pub fn resolve(file: Option<&Path>, flags: Overrides) -> Result<Settings, CliError> {
    let cfg = match file {
        Some(p) => load_config(p)?,
        None => EngineConfig::default(),
    };
    let mut training = cfg.training;
    if let Some(seed) = flags.seed {
        training.seed = seed;
    }
    if let Some(dim) = flags.dim {
        training.dim = dim;
    }
    if let Some(mode) = flags.index_mode {
        training.index_mode = mode.into();
    }
    if let Some(raw) = env_var(SEED_ENV) {
        training.seed = raw.parse().map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
    }
    if let Some(n) = flags.in_flight {
        training.in_flight = n;
    }
    let in_flight = training.in_flight;
    let settings = Settings {
        corpus: flags.corpus.or(cfg.corpus),
        index: flags.index.or(cfg.index),
        checkpoint: flags.checkpoint.or(cfg.checkpoint),
        lm: flags.lm.or(cfg.lm).unwrap_or_default(),
        endpoint: env_var(ENDPOINT_ENV).or(flags.endpoint).or(cfg.endpoint),
        token: env_var(TOKEN_ENV),
        mock_spec: flags.mock_spec.or(cfg.mock_spec),
        context_window: flags.context_window.or(cfg.context_window).unwrap_or(4096),
        k: flags.k.or(cfg.k).unwrap_or(10),
        query_window: flags.query_window.or(cfg.query_window).unwrap_or(128),
        in_flight,
        context_len: cfg.context_len.unwrap_or(128),
        continuation_len: cfg.continuation_len.unwrap_or(128),
        training,
    };
    if settings.k < 1 || settings.query_window < 1 || settings.dim() < 1 {
        return Err(CliError::Config("k, query_window and dim must be at least 1".into()));
    }
    Ok(settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"k": 3, "query_window": 64, "gamma": 0.5, "seed": 4}"#).unwrap();
        let s = resolve(Some(&path), Overrides { k: Some(7), ..Overrides::default() }).unwrap();
        assert_eq!(s.k, 7);
        assert_eq!(s.query_window, 64);
        assert_eq!(s.training.gamma, 0.5);
        assert_eq!(s.training.beta, 0.1);
    }

    #[test]
    fn bad_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(resolve(Some(&path), Overrides::default()), Err(CliError::Config(_))));
    }
}
