//! Flat `key = value` configuration text, `#` comments.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}` given more than once")]
    Duplicate { key: String },
    #[error("key `{key}`: invalid value {value:?}: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
}

/// Parsed entries in file order. Keys may repeat; callers decide.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    pub entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            entries.push((k.to_owned(), v.trim().to_owned()));
        }
        Ok(Self { entries })
    }

    /// Rejects any key not in `known`, and repeats of keys not in `repeatable`.
    pub fn check_keys(&self, known: &[&str], repeatable: &[&str]) -> Result<(), KvError> {
        let mut seen = std::collections::HashSet::new();
        for (k, _) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(KvError::UnknownKey(k.clone()));
            }
            if !seen.insert(k.as_str()) && !repeatable.contains(&k.as_str()) {
                return Err(KvError::Duplicate { key: k.clone() });
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, KvError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| KvError::InvalidValue {
        key: key.to_owned(),
        value: value.to_owned(),
        reason: e.to_string(),
    })
}

pub fn parse_list<T: std::str::FromStr>(key: &str, value: &str, sep: char) -> Result<Vec<T>, KvError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(sep)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}
