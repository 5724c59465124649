//! `key = value` run configuration.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment
//! key = value
//! list_key = 1.0, 0.5, 0.1
//! ```
//!
//! Keys are `[a-z0-9_]+`. Leading and trailing whitespace is ignored, blank
//! lines and lines starting with `#` are skipped, and a key may appear only
//! once. Lists are comma separated. A command consumes the keys it knows;
//! anything left over is an error.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("key `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("unknown key(s): {0}")]
    Unknown(String),
}

impl ConfigError {
    pub fn value(key: &str, message: impl Display) -> Self {
        ConfigError::Value {
            key: key.to_string(),
            message: message.to_string(),
        }
    }
}

/// Raw entries plus a record of which keys have been read.
#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax { line: k + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || !key.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
                return Err(syntax(format!("invalid key `{key}`")));
            }
            if value.is_empty() {
                return Err(syntax(format!("key `{key}` has no value")));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(syntax(format!("key `{key}` given twice")));
            }
        }
        Ok(Self {
            entries,
            used: RefCell::default(),
        })
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Self {
        Self {
            entries,
            used: RefCell::default(),
        }
    }

    /// Sets a value unless the key is already present.
    pub fn set_default(&mut self, key: &str, value: impl Display) {
        self.entries.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    /// Replaces a value.
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| ConfigError::value(key, format!("cannot parse `{v}`: {e}"))))
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| ConfigError::value(key, "missing"))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: Display,
    {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<T>()
                    .map_err(|e| ConfigError::value(key, format!("cannot parse list item `{item}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Fails on keys that no accessor asked for.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown(unknown.join(", ")))
        }
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}

/// Renders a list the way [`Config::list`] reads it back.
pub fn render_list<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_lists() {
        let c = Config::parse("# run\n n_sites = 8\n\nsparsity = 1, 0.5,0.02\n").unwrap();
        assert_eq!(c.require::<usize>("n_sites").unwrap(), 8);
        assert_eq!(c.list::<f64>("sparsity").unwrap().unwrap(), vec![1.0, 0.5, 0.02]);
        assert_eq!(c.get::<f64>("beta").unwrap(), None);
        c.finish().unwrap();
    }

    #[test]
    fn rejects_bad_syntax() {
        for bad in ["n_sites 8", "N = 8", "n_sites =", "a = 1\na = 2", " = 3"] {
            assert!(matches!(Config::parse(bad), Err(ConfigError::Syntax { .. })), "{bad}");
        }
    }

    #[test]
    fn rejects_unknown_keys() {
        let c = Config::parse("n_sites = 8\nn_sties = 9").unwrap();
        c.require::<usize>("n_sites").unwrap();
        let err = c.finish().unwrap_err();
        assert!(err.to_string().contains("n_sties"));
    }

    #[test]
    fn value_errors_name_the_key() {
        let c = Config::parse("j = abc\nsparsity = 1, x").unwrap();
        assert!(c.require::<f64>("j").unwrap_err().to_string().contains("`j`"));
        assert!(c.list::<f64>("sparsity").unwrap_err().to_string().contains("`sparsity`"));
        assert!(c.require::<f64>("omega0").unwrap_err().to_string().contains("missing"));
    }

    #[test]
    fn lists_round_trip_floats() {
        let xs = [0.1, 1.0 / 3.0, 1e-7, 2.5e10];
        let c = Config::parse(&format!("x = {}", render_list(&xs))).unwrap();
        assert_eq!(c.list::<f64>("x").unwrap().unwrap(), xs);
    }
}
