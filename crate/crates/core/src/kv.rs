//! Flat `key = value` text files.
//!
//! Used for benchmark specs, truth records, run reports and CLI config files.
//! One entry per line; blank lines and lines starting with `#` are ignored.
//! Keys keep their insertion order when written.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an existing value in place.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn comment(&mut self, text: &str) {
        self.entries.push((format!("# {text}"), String::new()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|(k, _)| !k.starts_with('#'))
            .map(|(k, _)| k.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(format!("missing key '{key}'")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::config(format!("key '{key}': cannot parse '{raw}'")))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("key '{key}': cannot parse '{raw}'"))),
        }
    }

    /// Comma-separated list of values.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("key '{key}': cannot parse '{s}'")))
            })
            .collect()
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut kv = KvFile::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                column: String::new(),
                message: format!("expected 'key = value', found '{line}'"),
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    column: String::new(),
                    message: "empty key".into(),
                });
            }
            kv.set(key, v.trim());
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

impl Display for KvFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            if k.starts_with('#') {
                writeln!(f, "{k}")?;
            } else {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

/// Joins values with commas for [`KvFile::parse_list`].
pub fn join_list<T: Display>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
