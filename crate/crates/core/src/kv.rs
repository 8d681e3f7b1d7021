//! Plain-text `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are dotted
//! section paths such as `protocol.blocks`. Unknown keys are kept so that
//! each component can pick the ones it owns.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected `key=value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse {value:?}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(KvError::Malformed {
                    line: idx + 1,
                    text: raw.to_string(),
                });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(KvError::Malformed {
                    line: idx + 1,
                    text: raw.to_string(),
                });
            }
            if entries
                .insert(key.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(KvError::Duplicate {
                    line: idx + 1,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses `key` if present, leaving `slot` untouched otherwise.
    pub fn read<T>(&self, key: &str, slot: &mut T) -> Result<(), KvError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.entries.get(key) {
            *slot = v.parse().map_err(|e: T::Err| KvError::BadValue {
                key: key.to_string(),
                value: v.clone(),
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Parses a comma-separated list under `key` if present.
    pub fn read_list<T>(&self, key: &str, slot: &mut Vec<T>) -> Result<(), KvError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.entries.get(key) {
            let mut out = Vec::new();
            for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                out.push(part.parse().map_err(|e: T::Err| KvError::BadValue {
                    key: key.to_string(),
                    value: v.clone(),
                    reason: e.to_string(),
                })?);
            }
            *slot = out;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
