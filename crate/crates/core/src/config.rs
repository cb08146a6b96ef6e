//! Flat `key = value` text files with `#` comments.
//!
//! Used by run configs and synthetic-data specs. Keys are case-sensitive,
//! each key may appear once, and every lookup error names the line.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(Error::Parse { line, column: None, message: format!("expected `key = value`, got `{content}`") });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse { line, column: None, message: "empty key".into() });
            }
            if let Some((_, first)) = entries.insert(key.to_string(), (v.trim().to_string(), line)) {
                return Err(Error::Parse {
                    line,
                    column: None,
                    message: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|(_, l)| *l)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Sets or replaces a key; overrides carry line 0.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| Error::Parse {
                line: *line,
                column: None,
                message: format!("invalid value `{v}` for `{key}`: {e}"),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    /// Rejects keys outside `allowed`, naming the offending line.
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Parse { line: *line, column: None, message: format!("unknown key `{k}`") });
            }
        }
        Ok(())
    }
}
