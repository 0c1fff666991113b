//! Run configuration files and system resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use modlock::system::{EquivariantSystem, ParamValue, SystemDescriptor};
use serde::Deserialize;

/// Either a built-in name, a path to a descriptor file, or an inline
/// descriptor.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Named(String),
    Inline(SystemDescriptor),
}

/// JSON run configuration. Command-line flags override its values.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: Option<SystemSource>,
    /// Must match the subcommand when present.
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub options: Option<serde_json::Value>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub tol_rel: Option<f64>,
    #[serde(default)]
    pub tol_abs: Option<f64>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Command-specific options, rejecting unknown keys.
    pub fn options<T: serde::de::DeserializeOwned + Default>(&self, command: &str) -> Result<T> {
        if let Some(c) = &self.command {
            if c != command {
                bail!("config is for command `{c}`, not `{command}`");
            }
        }
        match &self.options {
            None => Ok(T::default()),
            Some(v) => serde_json::from_value(v.clone()).context("invalid command options in config"),
        }
    }
}

/// Values of `--params k=v`; numbers when they parse as such.
pub fn parse_params(items: &[String]) -> Result<BTreeMap<String, ParamValue>> {
    let mut map = BTreeMap::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("parameter `{item}` is not of the form key=value"))?;
        let k = k.trim();
        if k.is_empty() {
            bail!("parameter `{item}` has an empty key");
        }
        let v = v.trim();
        let value = v
            .parse::<f64>()
            .map(ParamValue::Number)
            .unwrap_or_else(|_| ParamValue::Text(v.to_string()));
        map.insert(k.to_string(), value);
    }
    Ok(map)
}

fn descriptor_from_name(text: &str) -> Result<SystemDescriptor> {
    let path = Path::new(text);
    if path.extension().is_some_and(|e| e == "json") || path.is_file() {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read system descriptor {}", path.display()))?;
        serde_json::from_str(&body).with_context(|| format!("invalid system descriptor {}", path.display()))
    } else {
        Ok(SystemDescriptor::new(text))
    }
}

/// Descriptor from the flag, else the config, else `fallback` (usually the
/// one stored in an orbit artifact), with `--params` applied on top.
pub fn resolve_system(
    flag: Option<&str>,
    config: Option<&SystemSource>,
    fallback: Option<&SystemDescriptor>,
    params: &BTreeMap<String, ParamValue>,
) -> Result<EquivariantSystem> {
    let mut desc = match (flag, config, fallback) {
        (Some(s), _, _) => descriptor_from_name(s)?,
        (None, Some(SystemSource::Named(s)), _) => descriptor_from_name(s)?,
        (None, Some(SystemSource::Inline(d)), _) => d.clone(),
        (None, None, Some(d)) => d.clone(),
        (None, None, None) => bail!("no system given (use --system or a config file)"),
    };
    desc.params.extend(params.iter().map(|(k, v)| (k.clone(), v.clone())));
    desc.build().context("cannot build system")
}
