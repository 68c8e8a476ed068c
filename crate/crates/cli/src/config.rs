//! Run configuration: command-line flags override `key = value` entries from
//! the `--config` file, which override built-in defaults. Every resolved
//! value is logged to stderr.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use svcgraph_core::kv::{parse_value, KvFile};

use crate::CliError;

/// Keys accepted in a config file.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "out",
    "scenario",
    "csv",
    "input",
    "profile",
    "window",
    "corpus",
    "model",
    "hidden_dim",
    "embed_dim",
    "epochs",
    "learning_rate",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "select",
    "tau",
    "service",
    "minute_a",
    "minute_b",
    "path_length",
    "pct_low",
    "pct_high",
    "minutes",
    "candidate_cap",
];

pub struct RunConfig {
    file: KvFile,
    resolved: Vec<(&'static str, String)>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            None => KvFile::default(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))
                    .map_err(CliError::Usage)?;
                let kv = KvFile::parse(&text)
                    .with_context(|| format!("config {}", p.display()))
                    .map_err(CliError::Usage)?;
                kv.check_keys(KNOWN_KEYS, &["window"])
                    .with_context(|| format!("config {}", p.display()))
                    .map_err(CliError::Usage)?;
                kv
            }
        };
        Ok(Self {
            file,
            resolved: Vec::new(),
        })
    }

    fn file_value<T: FromStr>(&self, key: &'static str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|v| parse_value(key, v))
            .transpose()
            .map_err(|e| CliError::Usage(e.into()))
    }

    /// Flag, then config file, then `default`.
    pub fn value<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.resolved.push((key, v.to_string()));
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        self.resolved
            .push((key, v.as_ref().map_or_else(|| "(unset)".to_owned(), |v| v.to_string())));
        Ok(v)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::Usage(anyhow!("missing `{key}` (pass --{} or set it in the config file)", key.replace('_', "-"))))
    }

    pub fn path(&mut self, key: &'static str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file.get(key).map(PathBuf::from),
        };
        let v = v.ok_or_else(|| {
            CliError::Usage(anyhow!("missing `{key}` (pass --{} or set it in the config file)", key.replace('_', "-")))
        })?;
        self.resolved.push((key, v.display().to_string()));
        Ok(v)
    }

    pub fn optional_path(&mut self, key: &'static str, flag: Option<PathBuf>) -> Option<PathBuf> {
        let v = flag.or_else(|| self.file.get(key).map(PathBuf::from));
        self.resolved
            .push((key, v.as_ref().map_or_else(|| "(unset)".to_owned(), |p| p.display().to_string())));
        v
    }

    /// Repeatable key: flags replace the file's entries when any are given.
    pub fn list(&mut self, key: &'static str, flags: Vec<String>) -> Vec<String> {
        let v: Vec<String> = if flags.is_empty() {
            self.file.get_all(key).map(str::to_owned).collect()
        } else {
            flags
        };
        for item in &v {
            self.resolved.push((key, item.clone()));
        }
        v
    }

    pub fn log(&self, command: &str) {
        eprintln!("# {command} resolved config");
        for (k, v) in &self.resolved {
            eprintln!("{k} = {v}");
        }
    }
}
