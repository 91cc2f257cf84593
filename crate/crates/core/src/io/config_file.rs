//! Flat `key = value` config files.
//!
//! One key per line, `#` comments, no sections. Consumers take the
//! keys they understand; whatever is left over is an error, so a typo
//! in an ablation grid fails loudly instead of silently using a
//! default. Grid cells use dotted keys: `cell.<name>.<key> = value`
//! overrides `<key>` inside cell `<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key=value file with take-and-check-leftovers semantics.
#[derive(Debug, Clone)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
    label: String,
}

/// Reads and parses a config file.
pub fn parse_kv_file(path: &Path) -> Result<KvConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_kv(&text, &path.display().to_string())
}

/// Parses config text; `label` names the source in errors.
pub fn parse_kv(text: &str, label: &str) -> Result<KvConfig> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: label.to_string(),
                line: i + 1,
                msg: format!("expected key = value, got '{line}'"),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Parse {
                path: label.to_string(),
                line: i + 1,
                msg: "empty key or value".into(),
            });
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Parse {
                path: label.to_string(),
                line: i + 1,
                msg: format!("duplicate key '{key}'"),
            });
        }
    }
    Ok(KvConfig {
        map,
        label: label.to_string(),
    })
}

impl KvConfig {
    /// Removes and returns a raw value.
    pub fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    /// Removes and parses a value, or keeps the default when absent.
    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(raw) => raw.parse::<T>().map_err(|_| {
                Error::InvalidConfig(format!("{}: cannot parse {key} = '{raw}'", self.label))
            }),
        }
    }

    /// Removes and parses a required value.
    pub fn take_required<T: FromStr>(&mut self, key: &str) -> Result<T> {
        match self.map.remove(key) {
            None => Err(Error::InvalidConfig(format!(
                "{}: missing required key '{key}'",
                self.label
            ))),
            Some(raw) => raw.parse::<T>().map_err(|_| {
                Error::InvalidConfig(format!("{}: cannot parse {key} = '{raw}'", self.label))
            }),
        }
    }

    /// Removes every `cell.<name>.<key>` entry, grouped by cell name in
    /// file-independent sorted order.
    pub fn take_cells(&mut self) -> BTreeMap<String, Vec<(String, String)>> {
        let cell_keys: Vec<String> = self
            .map
            .keys()
            .filter(|k| k.starts_with("cell."))
            .cloned()
            .collect();
        let mut cells: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        for full in cell_keys {
            let value = self.map.remove(&full).expect("key listed above");
            let rest = &full["cell.".len()..];
            if let Some((name, key)) = rest.split_once('.') {
                cells
                    .entry(name.to_string())
                    .or_default()
                    .push((key.to_string(), value));
            } else {
                // malformed cell key; push back for finish() to flag
                self.map.insert(full, value);
            }
        }
        cells
    }

    /// Errors unless every key has been consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(Error::InvalidConfig(format!(
                "{}: unknown key '{key}'",
                self.label
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Applies override pairs on top of the current map (used to build
    /// one grid cell's config from the shared base).
    pub fn apply_overrides(&mut self, pairs: &[(String, String)]) {
        for (k, v) in pairs {
            self.map.insert(k.clone(), v.clone());
        }
    }
}
