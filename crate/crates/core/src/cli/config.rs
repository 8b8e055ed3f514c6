//! Layered application settings: defaults, then a TOML file, then
//! `AUTOFEEDBACK_<SECTION>_<KEY>` environment variables, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::llm::{ChatParams, HttpConfig, RetryPolicy, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL};

pub const ENV_PREFIX: &str = "AUTOFEEDBACK_";
/// Names the config file; not a setting itself.
pub const CONFIG_ENV: &str = "AUTOFEEDBACK_CONFIG";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown setting `{0}`")]
    UnknownKey(String),
    #[error("setting `{key}` from {origin}: cannot parse `{value}` as {expected}")]
    BadValue { key: String, origin: String, value: String, expected: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub base_url: String,
    pub path: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_concurrency: usize,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub backoff_factor: u32,
    pub max_delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Directory with `agent1.txt`, `agent2.txt` and `agent1_revision.txt`
    /// plus their `.toml` manifests. Unset means the bundled templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<PathBuf>,
    pub cache: PathBuf,
    pub output_root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub seed: u64,
    pub n_per_class: usize,
    pub pilot_per_class: usize,
    pub overlap_percent: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub concurrency: usize,
    pub max_validation_rounds: u32,
    pub split_role: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub backend: BackendSection,
    pub paths: PathsSection,
    pub sampling: SamplingSection,
    pub run: RunSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        let http = HttpConfig::default();
        Self {
            backend: BackendSection {
                base_url: http.base_url,
                path: http.path,
                model: DEFAULT_MODEL.to_string(),
                temperature: 0.0,
                max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
                api_key_env: http.api_key_env,
                timeout_secs: http.timeout_secs,
                max_concurrency: http.max_concurrency,
                max_attempts: http.retry.max_attempts,
                base_delay_ms: http.retry.base_delay_ms,
                backoff_factor: http.retry.factor,
                max_delay_ms: http.retry.max_delay_ms,
            },
            paths: PathsSection {
                templates: None,
                context: None,
                cache: PathBuf::from("cache"),
                output_root: PathBuf::from("out"),
            },
            sampling: SamplingSection { seed: 2024, n_per_class: 120, pilot_per_class: 15, overlap_percent: 30 },
            run: RunSection { concurrency: 4, max_validation_rounds: 1, split_role: false },
        }
    }
}

/// Settings that may be absent from the defaults, typed for parsing.
const OPTIONAL_PATHS: &[&str] = &["paths.templates", "paths.context"];

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a number",
        Value::Boolean(_) => "true or false",
        _ => "a string",
    }
}

/// Parses `raw` into the same TOML type as `like`.
fn typed(raw: &str, like: Option<&Value>) -> Option<Value> {
    match like {
        Some(Value::Integer(_)) => raw.trim().parse().ok().map(Value::Integer),
        Some(Value::Float(_)) => raw.trim().parse().ok().map(Value::Float),
        Some(Value::Boolean(_)) => raw.trim().parse().ok().map(Value::Boolean),
        _ => Some(Value::String(raw.to_string())),
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl AppConfig {
    fn defaults_table() -> Table {
        Table::try_from(AppConfig::default()).expect("defaults serialize")
    }

    /// Sets `section.key` from a string, typed after the default value.
    fn set(tree: &mut Table, key: &str, raw: &str, origin: &str) -> Result<(), ConfigError> {
        let defaults = Self::defaults_table();
        let (section, field) = key.split_once('.').ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let known = defaults.get(section).and_then(Value::as_table).and_then(|t| t.get(field));
        if known.is_none() && !OPTIONAL_PATHS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let value = typed(raw, known).ok_or_else(|| ConfigError::BadValue {
            key: key.to_string(),
            origin: origin.to_string(),
            value: raw.to_string(),
            expected: type_name(known.expect("strings always parse")),
        })?;
        let table = tree.entry(section).or_insert_with(|| Value::Table(Table::new()));
        table.as_table_mut().expect("sections are tables").insert(field.to_string(), value);
        Ok(())
    }

    /// Builds the effective configuration. `env` is typically
    /// `std::env::vars()`; `flags` are `section.key` overrides.
    pub fn load(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut tree = Self::defaults_table();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
            let parsed: Table = text
                .parse()
                .map_err(|e: toml::de::Error| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
            merge(&mut tree, parsed);
        }
        let mut env: Vec<(String, String)> =
            env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != CONFIG_ENV).collect();
        env.sort();
        for (name, raw) in env {
            let rest = name[ENV_PREFIX.len()..].to_ascii_lowercase();
            let key = rest.replacen('_', ".", 1);
            Self::set(&mut tree, &key, &raw, &name)?;
        }
        for (key, raw) in flags {
            Self::set(&mut tree, key, raw, "command line")?;
        }
        let cfg: AppConfig =
            Value::Table(tree).try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = &self.backend;
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if b.model.trim().is_empty() {
            return bad("backend.model is empty");
        }
        if !(0.0..=2.0).contains(&b.temperature) {
            return bad("backend.temperature must be within 0..=2");
        }
        if b.max_output_tokens == 0 || b.max_concurrency == 0 || b.max_attempts == 0 {
            return bad("backend.max_output_tokens, max_concurrency and max_attempts must be at least 1");
        }
        if b.api_key_env.trim().is_empty() {
            return bad("backend.api_key_env is empty");
        }
        if self.run.concurrency == 0 || self.run.max_validation_rounds == 0 {
            return bad("run.concurrency and run.max_validation_rounds must be at least 1");
        }
        if self.sampling.overlap_percent > 100 {
            return bad("sampling.overlap_percent must be at most 100");
        }
        Ok(())
    }

    pub fn chat_params(&self) -> ChatParams {
        ChatParams {
            model: self.backend.model.clone(),
            temperature: self.backend.temperature,
            max_output_tokens: self.backend.max_output_tokens,
        }
    }

    pub fn http_config(&self) -> HttpConfig {
        let b = &self.backend;
        HttpConfig {
            base_url: b.base_url.clone(),
            path: b.path.clone(),
            api_key_env: b.api_key_env.clone(),
            timeout_secs: b.timeout_secs,
            max_concurrency: b.max_concurrency,
            retry: RetryPolicy {
                max_attempts: b.max_attempts,
                base_delay_ms: b.base_delay_ms,
                factor: b.backoff_factor,
                max_delay_ms: b.max_delay_ms,
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
