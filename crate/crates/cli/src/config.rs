//! Resolved CLI configuration: flags over environment over file over defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use repairgraph::llm::{BackendConfig, BackendMode};
use repairgraph::memory::{DEFAULT_K, DEFAULT_TAU};
use repairgraph::pipeline::{PipelineConfig, DEFAULT_MAX_REPAIRS};
use repairgraph::sandbox::DEFAULT_TIMEOUT_S;

pub const DEFAULT_CONFIG_FILE: &str = "repairgraph.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub backend: BackendConfig,
    pub memory_path: PathBuf,
    pub interpreter_path: PathBuf,
    pub k: usize,
    pub tau: f64,
    pub default_timeout_s: f64,
    pub default_max_repairs: u32,
    pub report_dir: PathBuf,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::default(),
            memory_path: PathBuf::from(".repairgraph/memory.json"),
            interpreter_path: PathBuf::from("python3"),
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
            default_timeout_s: DEFAULT_TIMEOUT_S,
            default_max_repairs: DEFAULT_MAX_REPAIRS,
            report_dir: PathBuf::from(".repairgraph/reports"),
        }
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub memory: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub timeout: Option<f64>,
    pub max_repairs: Option<u32>,
    pub k: Option<usize>,
    pub tau: Option<f64>,
}

#[derive(Debug)]
pub enum ConfigError {
    /// The file exists (or was asked for) but cannot be used.
    File(String),
    /// A value is out of range or unparsable.
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::File(m) | ConfigError::Invalid(m) => f.write_str(m),
        }
    }
}

/// Where the config file comes from, if anywhere.
pub fn config_path(flag: Option<&Path>, env: &dyn Fn(&str) -> Option<String>) -> Option<(PathBuf, bool)> {
    if let Some(p) = flag {
        return Some((p.to_path_buf(), true));
    }
    if let Some(p) = env("REPAIRGRAPH_CONFIG") {
        return Some((PathBuf::from(p), true));
    }
    let default = PathBuf::from(DEFAULT_CONFIG_FILE);
    default.exists().then_some((default, false))
}

fn parse_env<T: std::str::FromStr>(name: &str, value: Option<String>) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|e| ConfigError::Invalid(format!("{name}={v:?}: {e}")))
        })
        .transpose()
}

impl CliConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::File(format!("config {}: {e}", path.display())))
    }

    /// Build the effective configuration. `env` is injected so tests need
    /// not touch the process environment.
    pub fn resolve(overrides: &Overrides, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut cfg = match config_path(overrides.config.as_deref(), env) {
            Some((path, _)) => Self::from_file(&path)?,
            None => Self::default(),
        };

        if let Some(v) = env("REPAIRGRAPH_MODEL") {
            cfg.backend.model_id = v;
        }
        if let Some(v) = env("REPAIRGRAPH_BASE_URL") {
            cfg.backend.base_url = v;
        }
        if let Some(v) = parse_env::<BackendMode>("REPAIRGRAPH_MODE", env("REPAIRGRAPH_MODE"))? {
            cfg.backend.mode = v;
        }
        if let Some(v) = env("REPAIRGRAPH_PYTHON") {
            cfg.interpreter_path = PathBuf::from(v);
        }
        if let Some(v) = env("REPAIRGRAPH_MEMORY") {
            cfg.memory_path = PathBuf::from(v);
        }
        if let Some(v) = env("REPAIRGRAPH_REPORT_DIR") {
            cfg.report_dir = PathBuf::from(v);
        }
        if let Some(v) = parse_env("REPAIRGRAPH_K", env("REPAIRGRAPH_K"))? {
            cfg.k = v;
        }
        if let Some(v) = parse_env("REPAIRGRAPH_TAU", env("REPAIRGRAPH_TAU"))? {
            cfg.tau = v;
        }

        if let Some(v) = &overrides.memory {
            cfg.memory_path = v.clone();
        }
        if let Some(v) = &overrides.report_dir {
            cfg.report_dir = v.clone();
        }
        if let Some(v) = overrides.timeout {
            cfg.default_timeout_s = v;
        }
        if let Some(v) = overrides.max_repairs {
            cfg.default_max_repairs = v;
        }
        if let Some(v) = overrides.k {
            cfg.k = v;
        }
        if let Some(v) = overrides.tau {
            cfg.tau = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [-1, 1], got {}", self.tau));
        }
        if !(self.default_timeout_s.is_finite() && self.default_timeout_s > 0.0) {
            return bad(format!("timeout must be positive, got {}", self.default_timeout_s));
        }
        if self.default_max_repairs == 0 {
            return bad("max_repairs must be at least 1".into());
        }
        if !(self.backend.timeout_s.is_finite() && self.backend.timeout_s > 0.0) {
            return bad(format!("backend.timeout_s must be positive, got {}", self.backend.timeout_s));
        }
        if self.backend.model_id.trim().is_empty() {
            return bad("backend.model_id must not be empty".into());
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            k: self.k,
            tau: self.tau,
            timeout_s: self.default_timeout_s,
        }
    }
}
