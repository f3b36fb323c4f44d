//! Plain-text `key: value` files, used for cube headers, corpus metadata
//! and run configurations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected `key: value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("missing key {0:?}")]
    Missing(String),
    #[error("key {key:?}: cannot parse {value:?}")]
    Value { key: String, value: String },
}

/// Ordered `key: value` map. Keys are lower-cased and trimmed; `#` starts a
/// comment; blank lines are ignored. `=` is accepted as a separator too.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let sep = line.find([':', '=']).ok_or_else(|| KvError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            })?;
            let key = line[..sep].trim().to_ascii_lowercase();
            let value = line[sep + 1..].trim().to_string();
            if key.is_empty() {
                return Err(KvError::Syntax { line: n + 1, text: raw.to_string() });
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(KvError::Duplicate { line: n + 1, key });
            }
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_ascii_lowercase(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| KvError::Value {
                key: key.to_string(),
                value: v.to_string(),
            }),
        }
    }

    pub fn parse_required<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.parse_value(key)?.ok_or_else(|| KvError::Missing(key.to_string()))
    }

    /// Comma-separated list value.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| KvError::Value {
                        key: key.to_string(),
                        value: s.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }
}

impl fmt::Display for KvMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}: {v}")?;
        }
        Ok(())
    }
}
