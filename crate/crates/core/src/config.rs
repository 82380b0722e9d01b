//! Flat TOML configuration for the pipeline. Every key has a default;
//! a missing file means "all defaults". Secrets (the geolocation API
//! key) come from the environment, never from the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config {path}: {key} {message}")]
    Invalid {
        path: String,
        key: &'static str,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything the subcommands need. Analysis defaults mirror the
/// methodology the tool implements: a seven-link node threshold and
/// the 0.01% heaviest co-download edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub store_path: PathBuf,

    // tracker client
    pub retry_base_secs: f64,
    pub retry_max_n: u32,
    pub retry_scale: f64,
    pub num_want: u32,
    pub harvest_concurrency: usize,
    pub per_tracker_interval_ms: u64,
    /// Endpoints announced to in addition to the trackers named in each
    /// magnet, host:port.
    pub extra_trackers: Vec<String>,

    // enrichment providers
    pub offline_provider_path: Option<PathBuf>,
    pub http_provider_url: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub http_provider_interval_ms: u64,

    // flagging and normalization inputs
    pub flag_list_paths: Vec<PathBuf>,
    pub city_table_path: Option<PathBuf>,
    pub interest_rules_path: Option<PathBuf>,

    // analysis parameters
    pub min_links: usize,
    pub top_fraction: f64,
    pub top_k: usize,
    pub uploader: Option<String>,

    // report parameters
    pub pseudonymize: bool,
    pub coord_decimals: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            store_path: PathBuf::from("swarmtrace.json"),
            retry_base_secs: 15.0,
            retry_max_n: 3,
            retry_scale: 1.0,
            num_want: 200,
            harvest_concurrency: 4,
            per_tracker_interval_ms: 250,
            extra_trackers: Vec::new(),
            offline_provider_path: None,
            http_provider_url: None,
            api_key_env: "SWARMTRACE_API_KEY".to_string(),
            http_provider_interval_ms: 1000,
            flag_list_paths: Vec::new(),
            city_table_path: None,
            interest_rules_path: None,
            min_links: 7,
            top_fraction: 0.0001,
            top_k: 10,
            uploader: None,
            pseudonymize: true,
            coord_decimals: 4,
        }
    }
}

/// Raw file shape: flat keys, all optional. `deny_unknown_fields` turns
/// typos into load errors instead of silently ignored knobs.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    store_path: Option<PathBuf>,
    retry_base_secs: Option<f64>,
    retry_max_n: Option<u32>,
    retry_scale: Option<f64>,
    num_want: Option<u32>,
    harvest_concurrency: Option<usize>,
    per_tracker_interval_ms: Option<u64>,
    extra_trackers: Option<Vec<String>>,
    offline_provider_path: Option<PathBuf>,
    http_provider_url: Option<String>,
    api_key_env: Option<String>,
    http_provider_interval_ms: Option<u64>,
    flag_list_paths: Option<Vec<PathBuf>>,
    city_table_path: Option<PathBuf>,
    interest_rules_path: Option<PathBuf>,
    min_links: Option<usize>,
    top_fraction: Option<f64>,
    top_k: Option<usize>,
    uploader: Option<String>,
    pseudonymize: Option<bool>,
    coord_decimals: Option<usize>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        let defaults = PipelineConfig::default();
        let config = PipelineConfig {
            store_path: raw.store_path.unwrap_or(defaults.store_path),
            retry_base_secs: raw.retry_base_secs.unwrap_or(defaults.retry_base_secs),
            retry_max_n: raw.retry_max_n.unwrap_or(defaults.retry_max_n),
            retry_scale: raw.retry_scale.unwrap_or(defaults.retry_scale),
            num_want: raw.num_want.unwrap_or(defaults.num_want),
            harvest_concurrency: raw
                .harvest_concurrency
                .unwrap_or(defaults.harvest_concurrency),
            per_tracker_interval_ms: raw
                .per_tracker_interval_ms
                .unwrap_or(defaults.per_tracker_interval_ms),
            extra_trackers: raw.extra_trackers.unwrap_or_default(),
            offline_provider_path: raw.offline_provider_path,
            http_provider_url: raw.http_provider_url,
            api_key_env: raw.api_key_env.unwrap_or(defaults.api_key_env),
            http_provider_interval_ms: raw
                .http_provider_interval_ms
                .unwrap_or(defaults.http_provider_interval_ms),
            flag_list_paths: raw.flag_list_paths.unwrap_or_default(),
            city_table_path: raw.city_table_path,
            interest_rules_path: raw.interest_rules_path,
            min_links: raw.min_links.unwrap_or(defaults.min_links),
            top_fraction: raw.top_fraction.unwrap_or(defaults.top_fraction),
            top_k: raw.top_k.unwrap_or(defaults.top_k),
            uploader: raw.uploader,
            pseudonymize: raw.pseudonymize.unwrap_or(defaults.pseudonymize),
            coord_decimals: raw.coord_decimals.unwrap_or(defaults.coord_decimals),
        };
        config.validate(origin)?;
        Ok(config)
    }

    pub fn validate(&self, origin: &str) -> Result<(), ConfigError> {
        let bad = |key: &'static str, message: String| {
            Err(ConfigError::Invalid {
                path: origin.to_string(),
                key,
                message,
            })
        };
        if self.min_links == 0 {
            return bad("min_links", "must be at least 1".into());
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad("top_fraction", format!("{} is outside (0, 1]", self.top_fraction));
        }
        if self.harvest_concurrency == 0 {
            return bad("harvest_concurrency", "must be at least 1".into());
        }
        if self.retry_base_secs <= 0.0 || self.retry_scale <= 0.0 {
            return bad("retry_base_secs", "base and scale must be positive".into());
        }
        if self.num_want == 0 {
            return bad("num_want", "must be at least 1".into());
        }
        if self.coord_decimals > 7 {
            return bad("coord_decimals", "more than 7 decimals defeats rounding".into());
        }
        Ok(())
    }

    /// API key read from the configured environment variable; empty
    /// values count as unset.
    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env)
            .ok()
            .filter(|v| !v.is_empty())
    }

    pub fn http_provider_interval(&self) -> Duration {
        Duration::from_millis(self.http_provider_interval_ms)
    }

    /// Lock file lives beside the store: `<store>.lock`.
    pub fn lock_path(&self) -> PathBuf {
        suffixed(&self.store_path, ".lock")
    }

    /// Append-only provenance log beside the store: `<store>.runlog`.
    pub fn run_log_path(&self) -> PathBuf {
        suffixed(&self.store_path, ".runlog")
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}
