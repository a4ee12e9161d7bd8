use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::backbone::{matched_filter_config, ModelConfig};
use crate::error::{Error, Result};
use crate::eviction::EvictionConfig;
use crate::harness::PasskeyTaskConfig;
use crate::retaining::TrainingConfig;

/// File locations. Command-line path flags take precedence over these.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub weights: Option<PathBuf>,
    pub heads: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub prompt: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// One experiment: every section is optional in the file and falls back to
/// its defaults. The default model is the matched-filter shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub eviction: EvictionConfig,
    pub task: PasskeyTaskConfig,
    pub io: IoConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: matched_filter_config(),
            training: TrainingConfig::default(),
            eviction: EvictionConfig::default(),
            task: PasskeyTaskConfig::default(),
            io: IoConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        self.eviction.validate()
    }

    /// Reads `path` (or starts from `{}`), applies dotted overrides, then
    /// deserializes and validates.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::data(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        for (key, raw) in overrides {
            apply_override(&mut doc, key, raw)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sets `key` (dot-separated) in `doc`. The value is parsed as JSON when it
/// parses, else taken as a string; a bare string given for a `policy` key is
/// read as `{"kind": value}`.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed override key {key:?}")));
    }
    let mut value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    if parts.last() == Some(&"policy") {
        if let Value::String(kind) = value {
            value = serde_json::json!({ "kind": kind });
        }
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override {key:?} descends into a non-object")))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::config(format!("override {key:?} descends into a non-object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

const SECTIONS: [&str; 6] = ["model", "training", "eviction", "task", "io", "seed"];

/// Splits `--section.key value` and `--section.key=value` (and `--seed`)
/// out of `args`, returning the remaining arguments and the overrides.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        let head = key.split('.').next().unwrap_or("");
        let dotted = key.contains('.') && SECTIONS.contains(&head);
        if !(dotted || key == "seed") {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| Error::config(format!("override --{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}
