//! Layered option resolution: command-line flag, then config-file key, then default.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvFile;

/// A flat config file whose keys are flag names with `_` or `-` separators.
pub(crate) struct Layered {
    file: KvFile,
    consulted: RefCell<BTreeSet<String>>,
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

impl Layered {
    pub(crate) fn load(path: Option<&Path>) -> Result<Self> {
        let raw = match path {
            Some(p) => KvFile::read(p)?,
            None => KvFile::new(),
        };
        let mut file = KvFile::new();
        for key in raw.keys() {
            file.set(&normalize(key), raw.get(key).unwrap_or_default());
        }
        Ok(Layered {
            file,
            consulted: RefCell::new(BTreeSet::new()),
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let key = normalize(key);
        let v = self.file.get(&key);
        self.consulted.borrow_mut().insert(key);
        v
    }

    fn parse_value<T: FromStr>(key: &str, text: &str) -> Result<T> {
        text.trim()
            .parse()
            .map_err(|_| Error::config(format!("config key '{key}': cannot parse '{text}'")))
    }

    pub(crate) fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        let from_file = self.raw(key);
        match (flag, from_file) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(text)) => Self::parse_value(key, text).map(Some),
            (None, None) => Ok(None),
        }
    }

    pub(crate) fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub(crate) fn list<T: FromStr>(
        &self,
        flag: Option<Vec<T>>,
        key: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>> {
        let from_file = self.raw(key);
        match (flag, from_file) {
            (Some(v), _) => Ok(v),
            (None, Some(text)) => text
                .split(',')
                .map(|part| Self::parse_value(key, part))
                .collect(),
            (None, None) => Ok(default),
        }
    }

    pub(crate) fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.opt::<bool>(None, key)?.unwrap_or(false))
    }

    /// Rejects config-file keys that no option looked at, which are almost
    /// always typos.
    pub(crate) fn finish(&self) -> Result<()> {
        let consulted = self.consulted.borrow();
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !consulted.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )))
        }
    }
}
