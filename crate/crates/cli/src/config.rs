//! Flat `key=value` run configuration.
//!
//! Keys mirror the long flag names (`prob=0.3`, `seed=42`). Blank lines and
//! lines starting with `#` are ignored. Command-line flags win over file
//! values; the resolved set is echoed into the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::UsageError;

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(
                    UsageError(format!("config line {}: expected key=value", i + 1)).into(),
                );
            };
            let key = key.trim().trim_start_matches("--").replace('_', "-");
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

/// Resolves each setting from flag, then config file, then default, and
/// remembers the effective value.
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    effective: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile) -> Self {
        Self {
            file,
            effective: BTreeMap::new(),
            consumed: BTreeSet::new(),
        }
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.consumed.insert(key.to_string());
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.values.get(key) {
                Some(raw) => Some(raw.parse::<T>().map_err(|e| {
                    UsageError(format!("config value {key}={raw:?} is invalid: {e}"))
                })?),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.effective.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.optional(key, flag)?.unwrap_or(default);
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| UsageError(format!("missing required setting --{key}")).into())
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let flag = flag.map(|p| p.to_string_lossy().into_owned());
        Ok(self.optional::<String>(key, flag)?.map(PathBuf::from))
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(key, flag)?
            .ok_or_else(|| UsageError(format!("missing required setting --{key}")).into())
    }

    /// Output directory; resolved like any path but left out of the echoed
    /// config so the same run into two directories yields one manifest.
    pub fn out_dir(&mut self, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let out = self.path("out", flag)?;
        self.effective.remove("out");
        Ok(out)
    }

    /// Fails on config-file keys that no setting consumed.
    pub fn finish(self) -> Result<BTreeMap<String, String>> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .collect();
        if !unknown.is_empty() {
            return Err(UsageError(format!("unknown config keys: {}", unknown.join(", "))).into());
        }
        Ok(self.effective)
    }
}
