//! Plain-text `key = value` configuration files.
//!
//! `#` starts a comment. Keys may repeat (scene files list one terrain patch
//! or object per line); single-valued lookups take the last occurrence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    path: PathBuf,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path,
                    line: n + 1,
                    msg: format!("expected `key = value`, got {line:?}"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse { path, line: n + 1, msg: "empty key".into() });
            }
            entries.push(Entry { key: key.to_string(), value: value.trim().to_string(), line: n + 1 });
        }
        Ok(Self { path, entries })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|e| e.key == key).map(|e| e.value.as_str())
    }

    /// Every value of a repeated key with its line number.
    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = (usize, &'a str)> + 'a {
        self.entries.iter().filter(move |e| e.key == key).map(|e| (e.line, e.value.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.key.as_str())
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some(entry) = self.entries.iter().rev().find(|e| e.key == key) else {
            return Ok(None);
        };
        entry.value.parse().map(Some).map_err(|_| Error::Parse {
            path: self.path.clone(),
            line: entry.line,
            msg: format!("cannot parse value {:?} for `{key}`", entry.value),
        })
    }

    /// Replaces every occurrence of `key` with a single entry.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.retain(|e| e.key != key);
        self.entries.push(Entry { key: key.to_string(), value: value.to_string(), line: 0 });
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push(Entry { key: key.to_string(), value: value.to_string(), line: 0 });
    }

    pub fn parse_error(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.clone(), line, msg: msg.into() }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{} = {}", e.key, e.value);
        }
        out
    }
}

/// Splits a whitespace-separated list of numbers.
pub fn parse_numbers(s: &str) -> Option<Vec<f64>> {
    s.split_whitespace().map(|t| t.parse().ok()).collect()
}
