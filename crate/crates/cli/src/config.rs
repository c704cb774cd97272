use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

pub const CONFIG_ENV: &str = "FORESIGHT_CONFIG";

/// Settings read from a TOML file of top-level keys. Command-line flags take
/// precedence over every field.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub ledger_path: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub trends_path: Option<PathBuf>,
    /// Fixture directory served instead of live model and news access.
    pub mock_fixtures_dir: Option<PathBuf>,
    pub llm_base_url: Option<String>,
    pub llm_model: Option<String>,
    pub news_base_url: Option<String>,
    pub svr_c: Option<f64>,
    pub svr_epsilon: Option<f64>,
    pub svr_gamma: Option<f64>,
    pub calibration_bins: Option<usize>,
    pub jobs: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Loads `flag`, else the file named by `FORESIGHT_CONFIG`, else defaults.
    pub fn resolve(flag: Option<&Path>) -> anyhow::Result<Self> {
        match flag {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }
}
