//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique and
//! may contain spaces (taxon names).

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

/// Environment variable consulted for the seed when no flag gives one.
pub const SEED_ENV: &str = "HIERCLASS_SEED";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("key '{key}': {message}")]
    Value { key: String, message: String },
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected key = value".into()))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(syntax("empty key".into()));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(syntax(format!("key '{key}' given twice")));
            }
        }
        Ok(Config { entries })
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| ConfigError::Value {
                    key: key.to_string(),
                    message: e.to_string(),
                })
            })
            .transpose()
    }

    /// Comma-separated list value.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                parse_list(v).map_err(|message| ConfigError::Value {
                    key: key.to_string(),
                    message,
                })
            })
            .transpose()
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<&str, &str> {
        let p = format!("{prefix}.");
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|rest| (rest, v.as_str())))
            .collect()
    }

    /// Reject keys that are neither in `known` nor under one of `sections`.
    pub fn check_keys(&self, known: &[&str], sections: &[&str]) -> Result<(), ConfigError> {
        for key in self.entries.keys() {
            let in_section = sections.iter().any(|s| {
                key.strip_prefix(s)
                    .is_some_and(|rest| rest.starts_with('.') && rest.len() > 1)
            });
            if !known.contains(&key.as_str()) && !in_section {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }
        Ok(())
    }
}

pub fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: T::Err| format!("'{s}': {e}")))
        .collect()
}

/// Seed from, in order: the flag, [`SEED_ENV`], the config `seed` key, 0.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: &Config) -> Result<u64, ConfigError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = env.map(str::trim).filter(|v| !v.is_empty()) {
        return v.parse().map_err(|_| ConfigError::Value {
            key: SEED_ENV.to_string(),
            message: format!("'{v}' is not an unsigned integer"),
        });
    }
    Ok(config.get("seed")?.unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let c = Config::parse("# run\nseed = 7\n\n svm.c=1,2 \nsplit.count.Leuctra sp. = 2\n").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(c.get_list::<f64>("svm.c").unwrap(), Some(vec![1.0, 2.0]));
        assert_eq!(c.section("split.count").get("Leuctra sp."), Some(&"2"));
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(
            Config::parse("seed\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            Config::parse("a=1\na=2\n"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        let c = Config::parse("seed=x\n").unwrap();
        assert!(c.get::<u64>("seed").is_err());
    }

    #[test]
    fn key_check() {
        let c = Config::parse("seed=1\nsplit.count.A=2\n").unwrap();
        assert!(c.check_keys(&["seed"], &["split.count"]).is_ok());
        assert_eq!(
            c.check_keys(&["seed"], &[]),
            Err(ConfigError::UnknownKey("split.count.A".into()))
        );
    }

    #[test]
    fn seed_precedence() {
        let c = Config::parse("seed=3\n").unwrap();
        assert_eq!(resolve_seed(Some(1), Some("2"), &c).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), &c).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, &c).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some(""), &Config::default()).unwrap(), 0);
        assert!(resolve_seed(None, Some("-1"), &c).is_err());
    }
}
