//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment. Pipelines read the keys they
//! understand through the typed getters and then call
//! [`RunConfig::finish`], which rejects every key nobody asked for.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, WppError};

#[derive(Debug, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

fn config_err(msg: impl Into<String>) -> WppError {
    WppError::Config(msg.into())
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| config_err(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| WppError::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets or overrides a key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(config_err(format!("invalid key '{key}'")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides, e.g. from the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, pairs: &[S]) -> Result<()> {
        for p in pairs {
            let p = p.as_ref();
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| config_err(format!("override '{p}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| config_err(format!("key '{key}': cannot parse '{v}'"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| config_err(format!("missing required key '{key}'")))
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.raw(key).map(PathBuf::from))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)?
            .ok_or_else(|| config_err(format!("missing required key '{key}'")))
    }

    /// Errors on the first key that no getter has read.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(config_err(format!("unknown key '{k}'"))),
            None => Ok(()),
        }
    }
}
