//! `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys may appear once. Consumers take the keys they understand and then
//! call [`KeyValues::finish`], which rejects anything left over.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Syntax {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}:{line}: bad value for `{key}`: {message}")]
    BadValue {
        source_name: String,
        line: usize,
        key: String,
        message: String,
    },
    #[error("{source_name}: unknown key(s): {}", keys.join(", "))]
    UnknownKeys { source_name: String, keys: Vec<String> },
    #[error("{source_name}: missing required key `{key}`")]
    Missing { source_name: String, key: String },
    #[error("{}: {message}", path.display())]
    Read { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct KeyValues {
    source_name: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    source_name: source_name.to_string(),
                    line,
                    message: format!("expected `key = value`, got {content:?}"),
                });
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    source_name: source_name.to_string(),
                    line,
                    message: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), (value.trim().to_string(), line)).is_some() {
                return Err(ConfigError::Syntax {
                    source_name: source_name.to_string(),
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self {
            source_name: source_name.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn bad(&self, key: &str, line: usize, message: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            source_name: self.source_name.clone(),
            line,
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Removes `key` and parses it with `parse`.
    pub fn take_with<T, E: std::fmt::Display>(
        &mut self,
        key: &str,
        parse: impl FnOnce(&str) -> Result<T, E>,
    ) -> Result<Option<T>, ConfigError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => parse(&v).map(Some).map_err(|e| self.bad(key, line, e.to_string())),
        }
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.take_with(key, str::parse::<T>)
    }

    /// Comma-separated list.
    pub fn take_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.take_with(key, |v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse::<T>)
                .collect::<Result<Vec<_>, _>>()
        })
    }

    pub fn require<T>(&mut self, key: &str) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.take(key)?.ok_or_else(|| ConfigError::Missing {
            source_name: self.source_name.clone(),
            key: key.to_string(),
        })
    }

    pub fn finish(self) -> Result<(), ConfigError> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::UnknownKeys {
                source_name: self.source_name,
                keys: self.entries.into_keys().collect(),
            })
        }
    }
}

/// Parses a boolean written as `true`/`false` or `1`/`0`.
pub fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected true or false, got {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_take() {
        let mut kv = KeyValues::parse("# grid\nreps = 30\ncalipers = 10, 20,30 # trailing\n\nname=x\n", "t").unwrap();
        assert_eq!(kv.take::<usize>("reps").unwrap(), Some(30));
        assert_eq!(kv.take_list::<f64>("calipers").unwrap(), Some(vec![10.0, 20.0, 30.0]));
        assert_eq!(kv.take::<usize>("absent").unwrap(), None);
        match kv.finish() {
            Err(ConfigError::UnknownKeys { keys, .. }) => assert_eq!(keys, vec!["name".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(
            KeyValues::parse("a = 1\nb\n", "f"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            KeyValues::parse("a = 1\na = 2\n", "f"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        let mut kv = KeyValues::parse("\nreps = many\n", "f").unwrap();
        let err = kv.take::<usize>("reps").unwrap_err();
        assert!(err.to_string().starts_with("f:2: bad value for `reps`"), "{err}");
        let mut kv = KeyValues::parse("", "f").unwrap();
        assert!(matches!(kv.require::<u64>("seed"), Err(ConfigError::Missing { .. })));
    }
}
