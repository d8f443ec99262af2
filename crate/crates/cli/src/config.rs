//! Flat `key = value` configuration with command-line overrides.
//!
//! Every resolved setting is recorded so it can be echoed into the output
//! manifest; keys in the file that no command consumed are reported as
//! errors.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key = value, got '{raw}'", i + 1);
        };
        let key = k.trim().replace('_', "-");
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            bail!("line {}: duplicate key '{key}'", i + 1);
        }
    }
    Ok(map)
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_kv(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { file, resolved: BTreeMap::new() })
    }

    /// Flag value, else file value, else `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(s)) => s.parse::<T>().map_err(|e| anyhow::anyhow!("config key '{key}': {e}"))?,
            (None, None) => default,
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`get`](Self::get) without a default; `None` when unset.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match (flag, self.file.get(key)) {
            (Some(v), _) => Some(v),
            (None, Some(s)) => Some(s.parse::<T>().map_err(|e| anyhow::anyhow!("config key '{key}': {e}"))?),
            (None, None) => None,
        };
        self.resolved
            .insert(key.to_string(), v.as_ref().map_or_else(|| "none".to_string(), |v| v.to_string()));
        Ok(v)
    }

    /// Boolean switch: set by the flag or by `key = true` in the file.
    pub fn flag(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = flag
            || match self.file.get(key) {
                Some(s) => s.parse::<bool>().with_context(|| format!("config key '{key}'"))?,
                None => false,
            };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Records a derived value in the manifest.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Fails on file keys that nothing consumed.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.resolved.contains_key(*k)).collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
        }
        Ok(())
    }

    pub fn manifest(&self, command: &str) -> String {
        let mut s = format!("command = {command}\nversion = {}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.resolved {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

/// Reads a manifest written by [`Resolver::manifest`].
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_kv(&text)
}
