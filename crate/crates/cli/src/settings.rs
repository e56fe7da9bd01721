//! Run configuration: `key = value` files overridden by command-line flags,
//! and the manifest every run leaves behind.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use ecn::train::{parse_key_values, EcnConfig, SgdConfig};
use ecn::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

/// Resolved settings for one run. Keys from the config file are loaded first;
/// flags given on the command line replace them.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(config: Option<&Path>) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = config {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            for (k, v) in parse_key_values(&text, &path.display().to_string())? {
                s.values.insert(k, v);
            }
        }
        Ok(s)
    }

    pub fn flag<V: Display>(&mut self, key: &str, value: Option<V>) -> &mut Self {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
        self
    }

    /// Removes and parses `key`, falling back to `default`.
    pub fn take<V: FromStr>(&mut self, key: &str, default: V) -> Result<V> {
        Ok(self.take_opt(key)?.unwrap_or(default))
    }

    pub fn take_opt<V: FromStr>(&mut self, key: &str) -> Result<Option<V>> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")).into()),
        }
    }

    /// Applies every remaining key to a serde-serializable config. Values are
    /// read as JSON when they parse as JSON and as strings otherwise.
    pub fn apply_serde<C: Serialize + DeserializeOwned>(&mut self, cfg: C, keys: &[&str]) -> Result<C> {
        let mut v = serde_json::to_value(cfg)?;
        let map = v.as_object_mut().expect("config serializes to an object");
        for key in keys {
            if let Some(raw) = self.values.remove(*key) {
                let parsed = serde_json::from_str(&raw).unwrap_or(Value::String(raw.clone()));
                map.insert(key.to_string(), parsed);
            }
        }
        serde_json::from_value(v).map_err(|e| Error::Config(format!("invalid setting: {e}")).into())
    }

    pub fn sgd(&mut self, mut cfg: SgdConfig) -> Result<SgdConfig> {
        for (k, v) in std::mem::take(&mut self.values) {
            if !cfg.set(&k, &v)? {
                self.values.insert(k, v);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ecn(&mut self, mut cfg: EcnConfig) -> Result<EcnConfig> {
        for (k, v) in std::mem::take(&mut self.values) {
            if !cfg.set(&k, &v)? {
                self.values.insert(k, v);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fails on any key nothing consumed.
    pub fn finish(&self) -> Result<()> {
        match self.values.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::Config(format!("unknown setting '{k}'")).into()),
        }
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::Missing(path.to_path_buf())
    } else {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    Ok(())
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing report")?;
    write_file(path, text + "\n")
}

/// `manifest.json` in `out`: the command, its fully resolved configuration and
/// the engine version.
pub fn write_manifest(out: &Path, command: &str, config: Value) -> Result<()> {
    let manifest = json!({
        "command": command,
        "engine_version": ecn::VERSION,
        "config": config,
    });
    write_json(&out.join("manifest.json"), &manifest)
}
