//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. A later assignment of
//! the same key overrides an earlier one. Protocol files may additionally
//! contain `[name]` section headers; see [`parse_sections`].

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("{0}")]
    Invalid(String),
}

/// Key-value pairs with consumption tracking, so leftovers can be reported
/// as unknown keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

fn parse_line(line_no: usize, raw: &str) -> Result<Option<(String, String)>, ConfigError> {
    let line = raw.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
        line: line_no,
        message: format!("expected `key = value`, found `{line}`"),
    })?;
    let k = k.trim();
    if k.is_empty() {
        return Err(ConfigError::Syntax {
            line: line_no,
            message: "empty key".into(),
        });
    }
    Ok(Some((k.to_string(), v.trim().to_string())))
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv = KeyValues::default();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim_start().starts_with('[') {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: "section headers are only allowed in protocol files".into(),
                });
            }
            if let Some((k, v)) = parse_line(i + 1, raw)? {
                kv.entries.insert(k, v);
            }
        }
        Ok(kv)
    }

    /// Applies a `key=value` override.
    pub fn set_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        match parse_line(0, assignment)? {
            Some((k, v)) => {
                self.entries.insert(k, v);
                Ok(())
            }
            None => Err(ConfigError::Invalid(format!("bad override `{assignment}`"))),
        }
    }

    pub fn insert(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Entries of `other` override entries of `self`.
    pub fn merged_with(&self, other: &KeyValues) -> KeyValues {
        let mut out = self.clone();
        out.entries
            .extend(other.entries.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(value) => value.parse().map(Some).map_err(|e: T::Err| ConfigError::InvalidValue {
                key: key.to_string(),
                reason: e.to_string(),
                value,
            }),
        }
    }

    /// Removes and returns every key starting with `prefix`, with the prefix
    /// stripped.
    pub fn take_prefixed(&mut self, prefix: &str) -> Vec<(String, String)> {
        let keys: Vec<String> = self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        keys.into_iter()
            .map(|k| {
                let v = self.entries.remove(&k).unwrap_or_default();
                (k[prefix.len()..].to_string(), v)
            })
            .collect()
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_keys().next() {
            Some(k) => Err(ConfigError::UnknownKey(k)),
            None => Ok(()),
        }
    }
}

pub fn invalid(key: &str, value: impl ToString, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

/// Splits a protocol file into the shared preamble and named sections, in
/// file order.
pub fn parse_sections(text: &str) -> Result<(KeyValues, Vec<(String, KeyValues)>), ConfigError> {
    let mut shared = KeyValues::default();
    let mut sections: Vec<(String, KeyValues)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').map(str::trim).filter(|n| !n.is_empty());
            let name = name.ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("bad section header `{line}`"),
            })?;
            if sections.iter().any(|(n, _)| n == name) {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: format!("duplicate section `{name}`"),
                });
            }
            sections.push((name.to_string(), KeyValues::default()));
            continue;
        }
        if let Some((k, v)) = parse_line(i + 1, raw)? {
            let target = match sections.last_mut() {
                Some((_, kv)) => kv,
                None => &mut shared,
            };
            target.entries.insert(k, v);
        }
    }
    Ok((shared, sections))
}
