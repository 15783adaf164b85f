//! Service configuration: JSON file, then environment overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::session::EngineSettings;

pub const ENV_CONFIG: &str = "ELICIT_CONFIG";
pub const ENV_MODELS_DIR: &str = "ELICIT_MODELS_DIR";
pub const ENV_SESSIONS_DIR: &str = "ELICIT_SESSIONS_DIR";
pub const ENV_HOST: &str = "ELICIT_HOST";
pub const ENV_PORT: &str = "ELICIT_PORT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub models_dir: PathBuf,
    /// Session snapshots; `None` keeps sessions in memory only.
    pub sessions_dir: Option<PathBuf>,
    pub host: String,
    pub port: u16,
    pub engine: EngineSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            models_dir: PathBuf::from("models"),
            sessions_dir: Some(PathBuf::from("sessions")),
            host: "127.0.0.1".into(),
            port: 8080,
            engine: EngineSettings::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads `path`, or the file named by `ELICIT_CONFIG`, or defaults; then
    /// applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(ENV_CONFIG).map(PathBuf::from);
        let mut cfg = match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => {
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => ServiceConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = get(ENV_MODELS_DIR) {
            self.models_dir = v.into();
        }
        if let Some(v) = get(ENV_SESSIONS_DIR) {
            self.sessions_dir = (!v.is_empty()).then(|| v.into());
        }
        if let Some(v) = get(ENV_HOST) {
            self.host = v;
        }
        if let Some(v) = get(ENV_PORT) {
            self.port = v.parse().with_context(|| format!("{ENV_PORT}={v} is not a port"))?;
        }
        Ok(())
    }
}
