//! Layered configuration: command-line flag, then environment, then the
//! config file, then built-in defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use q8s_core::clusterapi::{load_kubeconfig, ClusterConfig, ConfigError};
use q8s_core::dispatch::{DEFAULT_BASE_IMAGE, DEFAULT_REGISTRY_PREFIX, DEFAULT_TIMEOUT};
use serde::Deserialize;

pub const ENV_KUBECONFIG: &str = "KUBECONFIG";
pub const ENV_REGISTRY_PREFIX: &str = "Q8S_REGISTRY_PREFIX";
pub const ENV_BASE_IMAGE: &str = "Q8S_BASE_IMAGE";
pub const ENV_BUILD_COMMAND: &str = "Q8S_BUILD_COMMAND";
pub const ENV_PUSH_COMMAND: &str = "Q8S_PUSH_COMMAND";
pub const ENV_CONFIG: &str = "Q8S_CONFIG";

/// `config.toml` keys. All optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub kubeconfig: Option<PathBuf>,
    pub registry_prefix: Option<String>,
    pub base_image: Option<String>,
    pub build_command: Option<String>,
    pub push_command: Option<String>,
    pub timeout_seconds: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct FlagValues {
    pub config: Option<PathBuf>,
    pub kubeconfig: Option<PathBuf>,
    pub registry_prefix: Option<String>,
    pub base_image: Option<String>,
    pub build_command: Option<String>,
    pub push_command: Option<String>,
    pub timeout_seconds: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub kubeconfig: Option<PathBuf>,
    pub registry_prefix: String,
    pub base_image: String,
    pub build_command: Option<String>,
    pub push_command: Option<String>,
    pub timeout: Duration,
}

/// The config file named by flag or `Q8S_CONFIG` (which must exist), else
/// the per-user file when present.
fn config_path(flags: &FlagValues, env: &dyn Fn(&str) -> Option<String>) -> Option<(PathBuf, bool)> {
    if let Some(p) = &flags.config {
        return Some((p.clone(), true));
    }
    if let Some(p) = env(ENV_CONFIG) {
        return Some((PathBuf::from(p), true));
    }
    let base = env("XDG_CONFIG_HOME")
        .map(PathBuf::from)
        .or_else(|| env("HOME").map(|h| PathBuf::from(h).join(".config")))?;
    Some((base.join("q8s/config.toml"), false))
}

impl Settings {
    pub fn resolve(flags: &FlagValues, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, String> {
        let file = match config_path(flags, env) {
            Some((path, true)) => FileConfig::load(&path)?,
            Some((path, false)) if path.is_file() => FileConfig::load(&path)?,
            _ => FileConfig::default(),
        };
        Ok(Self::layer(flags, env, file))
    }

    pub fn from_process(flags: &FlagValues) -> Result<Self, String> {
        Self::resolve(flags, &|k| std::env::var(k).ok().filter(|v| !v.is_empty()))
    }

    fn layer(flags: &FlagValues, env: &dyn Fn(&str) -> Option<String>, file: FileConfig) -> Self {
        let pick = |flag: &Option<String>, var: &str, file: Option<String>| flag.clone().or_else(|| env(var)).or(file);
        // KUBECONFIG may hold a path list; the first entry wins.
        let env_kubeconfig = env(ENV_KUBECONFIG)
            .and_then(|v| std::env::split_paths(&v).find(|p| !p.as_os_str().is_empty()));
        Self {
            kubeconfig: flags.kubeconfig.clone().or(env_kubeconfig).or(file.kubeconfig),
            registry_prefix: pick(&flags.registry_prefix, ENV_REGISTRY_PREFIX, file.registry_prefix)
                .unwrap_or_else(|| DEFAULT_REGISTRY_PREFIX.to_string()),
            base_image: pick(&flags.base_image, ENV_BASE_IMAGE, file.base_image)
                .unwrap_or_else(|| DEFAULT_BASE_IMAGE.to_string()),
            build_command: pick(&flags.build_command, ENV_BUILD_COMMAND, file.build_command),
            push_command: pick(&flags.push_command, ENV_PUSH_COMMAND, file.push_command),
            timeout: flags
                .timeout_seconds
                .or(file.timeout_seconds)
                .map(Duration::from_secs)
                .unwrap_or(DEFAULT_TIMEOUT),
        }
    }

    pub fn cluster_config(&self) -> Result<ClusterConfig, ConfigError> {
        match &self.kubeconfig {
            Some(path) => load_kubeconfig(path),
            None => Err(ConfigError::KubeconfigNotSet),
        }
    }
}
