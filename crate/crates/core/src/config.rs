//! TOML configuration file with dotted-key overrides.
//!
//! ```toml
//! [run]
//! mode = "csmr"
//! t_max = 6000
//!
//! [endpoints.crc]
//! base_url = "http://127.0.0.1:8000/v1"
//! model_name = "reasoner"
//! api_key_env = "CRC_API_KEY"
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::ConfigError;
use crate::gateway::EndpointConfig;
use crate::router::RoutingRules;
use crate::task::{GenerationParams, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub crc: EndpointConfig,
    pub pvp: EndpointConfig,
    pub judge: EndpointConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSettings {
    /// Seed for subset sampling (audit and `run --sample`).
    pub seed: u64,
    pub audit_sample: usize,
    /// Directory that relative image references resolve against.
    pub image_root: Option<PathBuf>,
    pub run_id: Option<String>,
}

impl Default for HarnessSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            audit_sample: 200,
            image_root: None,
            run_id: None,
        }
    }
}

/// Judge decoding defaults: greedy, short verdicts.
pub const JUDGE_PARAMS: GenerationParams = GenerationParams {
    temperature: 0.0,
    top_p: 1.0,
    top_k: 1,
    max_tokens: 512,
    repetition_penalty: 1.0,
};

fn default_judge_params() -> GenerationParams {
    JUDGE_PARAMS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub run: RunConfig,
    pub routing: RoutingRules,
    pub endpoints: Endpoints,
    #[serde(default = "default_judge_params")]
    pub judge_params: GenerationParams,
    pub harness: HarnessSettings,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            run: RunConfig::default(),
            routing: RoutingRules::default(),
            endpoints: Endpoints::default(),
            judge_params: JUDGE_PARAMS,
            harness: HarnessSettings::default(),
        }
    }
}

impl FileConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run.validate().map_err(ConfigError::Invalid)?;
        self.routing.validate().map_err(ConfigError::Invalid)?;
        self.judge_params.validate("judge_params").map_err(ConfigError::Invalid)?;
        for (name, ep) in [("crc", &self.endpoints.crc), ("pvp", &self.endpoints.pvp)] {
            if ep.max_context < self.run.t_max {
                return Err(ConfigError::Invalid(format!(
                    "endpoints.{name}.max_context ({}) is below run.t_max ({})",
                    ep.max_context, self.run.t_max
                )));
            }
        }
        for (name, ep) in [
            ("crc", &self.endpoints.crc),
            ("pvp", &self.endpoints.pvp),
            ("judge", &self.endpoints.judge),
        ] {
            if !(ep.timeout > 0.0 && ep.timeout.is_finite()) {
                return Err(ConfigError::Invalid(format!("endpoints.{name}.timeout must be positive")));
            }
        }
        Ok(())
    }
}

/// Parse `key=value`. The value is read as a TOML literal when possible
/// (`5`, `true`, `0.5`, `"x"`) and as a bare string otherwise.
pub fn parse_override(raw: &str) -> Result<(Vec<String>, Value), ConfigError> {
    let (key, value) = raw.split_once('=').ok_or_else(|| ConfigError::BadOverride(raw.to_string()))?;
    let path: Vec<String> = key.trim().split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(String::is_empty) {
        return Err(ConfigError::BadOverride(raw.to_string()));
    }
    let value = value.trim();
    let parsed = toml::from_str::<Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(root: &mut Table, path: &[String], value: Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("override path is nonempty");
    let mut table = root;
    for (i, key) in parents.iter().enumerate() {
        let entry = table.entry(key.clone()).or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("{} is not a table", path[..=i].join("."))))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Build a config from optional TOML text and overrides, then validate.
/// Both are layered over the defaults, so a partial table such as
/// `[run.crc_params] temperature = 0.0` keeps the other defaults.
pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<FileConfig, ConfigError> {
    let file: Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut root = Table::try_from(FileConfig::default()).expect("defaults serialize");
    merge(&mut root, file);
    for raw in overrides {
        let (path, value) = parse_override(raw)?;
        apply_override(&mut root, &path, value)?;
    }
    let cfg: FileConfig = Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load `path` (or defaults when `None`) and apply overrides.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<FileConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
            path: p.display().to_string(),
            source,
        })?,
        None => String::new(),
    };
    from_toml_str(&text, overrides)
}
