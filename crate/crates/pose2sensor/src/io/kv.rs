//! Flat `key = value` text: the shared syntax of config files, session
//! descriptors, and the checkpoint manifest's metadata section.
//!
//! One entry per line, `#` starts a comment, blank lines are skipped. Keys
//! are dotted lowercase identifiers; duplicates are errors so a typo never
//! silently wins over the line it shadows.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parsed entries in file order, plus lookup tracking so callers can reject
/// unknown keys after consuming the ones they understand.
#[derive(Debug)]
pub(crate) struct KvFile {
    entries: Vec<(String, String)>,
    consumed: Vec<bool>,
}

pub(crate) fn parse_kv(text: &str, what: &str) -> Result<KvFile> {
    let mut entries: Vec<(String, String)> = Vec::new();
    let mut seen = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{what} line {}: expected `key = value`, got {line:?}",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!(
                "{what} line {}: empty key",
                lineno + 1
            )));
        }
        if let Some(prev) = seen.insert(key.clone(), lineno + 1) {
            return Err(Error::Config(format!(
                "{what} line {}: duplicate key {key:?} (first given on line {prev})",
                lineno + 1
            )));
        }
        entries.push((key, value));
    }
    let consumed = vec![false; entries.len()];
    Ok(KvFile { entries, consumed })
}

impl KvFile {
    /// The raw value of `key`, marking it consumed.
    pub(crate) fn take(&mut self, key: &str) -> Option<&str> {
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if k == key {
                self.consumed[i] = true;
                return Some(v);
            }
        }
        None
    }

    /// A required value.
    pub(crate) fn require(&mut self, key: &str, what: &str) -> Result<&str> {
        // Split lookup to appease the borrow checker: find first, then take.
        if self.entries.iter().any(|(k, _)| k == key) {
            Ok(self.take(key).expect("found above"))
        } else {
            Err(Error::Config(format!("{what}: missing required key {key:?}")))
        }
    }

    /// Error naming every key no caller consumed.
    pub(crate) fn reject_unknown(&self, what: &str) -> Result<()> {
        let unknown: Vec<&str> = self
            .entries
            .iter()
            .zip(&self.consumed)
            .filter(|(_, &c)| !c)
            .map(|((k, _), _)| k.as_str())
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{what}: unknown key{} {}",
                if unknown.len() > 1 { "s" } else { "" },
                unknown.join(", ")
            )))
        }
    }
}

/// Parse helper with a uniform error message.
pub(crate) fn parse_value<T: std::str::FromStr>(value: &str, key: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "{what}: key {key:?} has unparsable value {value:?}"
        ))
    })
}

/// Comma-separated list with per-item parsing.
pub(crate) fn parse_list<T: std::str::FromStr>(value: &str, key: &str, what: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|item| parse_value(item.trim(), key, what))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_flags_unknown() {
        let mut kv = parse_kv("a.b = 1\n# note\n\nc = two\n", "test").unwrap();
        assert_eq!(kv.take("a.b"), Some("1"));
        let err = kv.reject_unknown("test").unwrap_err().to_string();
        assert!(err.contains("unknown key") && err.contains('c'), "{err}");
        assert_eq!(kv.take("c"), Some("two"));
        kv.reject_unknown("test").unwrap();
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = parse_kv("x = 1\nx = 2\n", "test").unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn missing_equals_is_an_error() {
        let err = parse_kv("just words\n", "test").unwrap_err().to_string();
        assert!(err.contains("key = value"), "{err}");
    }

    #[test]
    fn require_names_the_missing_key() {
        let mut kv = parse_kv("", "test").unwrap();
        let err = kv.require("dataset.kind", "test").unwrap_err().to_string();
        assert!(err.contains("dataset.kind"), "{err}");
    }

    #[test]
    fn lists_parse_with_trimming() {
        let v: Vec<u64> = parse_list("0, 1,2", "k", "t").unwrap();
        assert_eq!(v, [0, 1, 2]);
        assert!(parse_list::<u64>("0,x", "k", "t").is_err());
    }
}
