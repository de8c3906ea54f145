//! Flat `key = value` text: one pair per line, `#` starts a comment, blank
//! lines are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    origin: String,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(origin, format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::format(origin, format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::format(origin, format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(KeyValues {
            entries,
            origin: origin.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: Display,
    {
        self.raw(key)
            .map(|s| {
                s.parse::<V>()
                    .map_err(|e| Error::format(&self.origin, format!("key `{key}`: cannot parse `{s}`: {e}")))
            })
            .transpose()
    }

    /// Comma-separated list.
    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>>
    where
        V::Err: Display,
    {
        self.raw(key)
            .map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| {
                        p.parse::<V>()
                            .map_err(|e| Error::format(&self.origin, format!("key `{key}`: cannot parse `{p}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Fails on any key outside `known`.
    /// Entries whose key starts with `prefix.`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> KeyValues {
        let lead = format!("{prefix}.");
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&lead).map(|k| (k.to_string(), v.clone())))
                .collect(),
            origin: format!("{}[{prefix}]", self.origin),
        }
    }

    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::format(&self.origin, format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

/// Renders pairs in the given order.
pub fn render(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Prefixes every key of rendered `text` with `prefix.`.
pub fn prefixed(text: &str, prefix: &str) -> String {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| format!("{prefix}.{}\n", l.trim_start()))
        .collect()
}

pub fn join<V: Display>(items: &[V]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
