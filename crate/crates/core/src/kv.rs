//! Plain-text `key = value` documents with `#` comments.
//!
//! Used for configuration files and checkpoints. Keys are unique; order is
//! preserved on output.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses a document. Errors carry the offending line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "line {}: empty key",
                    lineno + 1
                )));
            }
            if doc.get(key).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
            doc.entries
                .push((key.to_string(), value.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    /// Inserts a float in round-trip-exact decimal form.
    pub fn insert_f64(&mut self, key: impl Into<String>, value: f64) {
        self.insert(key, format_f64(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("bad value for `{key}`: `{v}`"))),
        }
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.parse_value(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing key `{key}`")))
    }

    pub fn render(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// 17 significant digits; `str::parse` recovers the exact bits.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}
