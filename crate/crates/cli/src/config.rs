//! `key = value` configuration files mirroring command-line flags.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// One `key = value` entry with its line number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses a configuration file. Blank lines and lines starting with `#`
/// are ignored; keys are long flag names without the leading dashes and
/// may appear only once.
pub fn parse(path: &Path, text: &str) -> Result<Vec<Entry>> {
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
        let key = key.trim().trim_start_matches("--").to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Usage(format!("{}:{}: empty key", path.display(), i + 1)));
        }
        if !seen.insert(key.clone()) {
            return Err(Error::Usage(format!("{}:{}: duplicate key {key}", path.display(), i + 1)));
        }
        entries.push(Entry { line: i + 1, key, value });
    }
    Ok(entries)
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    parse(path, &text)
}
