//! Flat `name = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! consumed by some typed section; leftovers are reported with their line
//! number so typos do not silently fall back to defaults.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    key: String,
    value: String,
}

#[derive(Debug, Default)]
pub struct KvConfig {
    entries: Vec<Entry>,
    used: RefCell<BTreeSet<String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(Error::Config {
                    line,
                    msg: format!("expected `name = value`, got `{trimmed}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config { line, msg: format!("malformed key `{key}`") });
            }
            if value.is_empty() {
                return Err(Error::Config { line, msg: format!("missing value for `{key}`") });
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Config {
                    line,
                    msg: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
            entries.push(Entry { line, key: key.to_string(), value: value.to_string() });
        }
        Ok(Self { entries, used: RefCell::default() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Typed lookup; marks the key as consumed.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some(entry) = self.entries.iter().find(|e| e.key == key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert(key.to_string());
        entry.value.parse::<T>().map(Some).map_err(|_| Error::Config {
            line: entry.line,
            msg: format!("cannot parse `{}` for `{key}`", entry.value),
        })
    }

    /// Overwrites `slot` when the key is present.
    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Fails on the first key no section asked for.
    pub fn ensure_consumed(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|e| !used.contains(&e.key)) {
            Some(e) => Err(Error::Config { line: e.line, msg: format!("unknown key `{}`", e.key) }),
            None => Ok(()),
        }
    }
}

/// Accumulates `name = value` lines in insertion order.
#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.out, "# {text}");
        self
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.out, "{key} = {value}");
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

/// Parses from text and applies to a section.
pub trait KvSection: Sized {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()>;
    fn write(&self, out: &mut KvWriter);
}
