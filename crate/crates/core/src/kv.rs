//! Sectioned `key = value` text used for run configs and for the model
//! description embedded in checkpoints.
//!
//! ```text
//! # comment
//! [model]
//! preset = table1-4to1
//! g1.maps = 128,256,128
//! ```

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDoc {
    sections: IndexMap<String, IndexMap<String, String>>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        Error::Config(format!("line {}: unterminated section header", lineno + 1))
                    })?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Config(format!(
                        "line {}: empty section name",
                        lineno + 1
                    )));
                }
                current = name.to_string();
                doc.sections.entry(current.clone()).or_default();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            let section = doc.sections.entry(current.clone()).or_default();
            if section
                .insert(key.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{}`",
                    lineno + 1,
                    key
                )));
            }
        }
        Ok(doc)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(String::as_str)
    }

    pub fn remove(&mut self, section: &str, key: &str) -> Option<String> {
        self.sections
            .get_mut(section)
            .and_then(|s| s.shift_remove(key))
    }

    pub fn section(&self, section: &str) -> Option<&IndexMap<String, String>> {
        self.sections.get(section)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    /// Copies every entry of `other` over this document.
    pub fn merge(&mut self, other: &KvDoc) {
        for (name, entries) in &other.sections {
            for (k, v) in entries {
                self.set(name, k, v);
            }
        }
    }

    /// Typed lookup; `Ok(None)` when the key is absent.
    pub fn parse_opt<V: FromStr>(&self, section: &str, key: &str) -> Result<Option<V>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{s}`"))),
        }
    }

    pub fn parse_or<V: FromStr>(&self, section: &str, key: &str, default: V) -> Result<V> {
        Ok(self.parse_opt(section, key)?.unwrap_or(default))
    }

    /// Rejects any key of `section` not listed in `allowed`.
    pub fn check_keys(&self, section: &str, allowed: &[&str]) -> Result<()> {
        if let Some(entries) = self.sections.get(section) {
            for k in entries.keys() {
                if !allowed.iter().any(|a| a == k) {
                    return Err(Error::Config(format!(
                        "unknown key `{k}` in section [{section}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for KvDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, entries) in &self.sections {
            if !name.is_empty() {
                if !first {
                    writeln!(f)?;
                }
                writeln!(f, "[{name}]")?;
            }
            for (k, v) in entries {
                writeln!(f, "{k} = {v}")?;
            }
            first = false;
        }
        Ok(())
    }
}

/// Parses `1,2,3` into a list; the empty string is an empty list.
pub fn parse_list<V: FromStr>(s: &str) -> Result<Vec<V>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse list item `{}`", p.trim())))
        })
        .collect()
}

pub fn format_list<V: ToString>(items: &[V]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
