//! `key = value` run configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys are matched with `-` and
//! `_` treated alike; a key outside the allowed set is an error, as is a
//! repeated key.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{FedcalError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, (usize, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-").to_ascii_lowercase()
}

impl RunConfig {
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| FedcalError::Parse {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = normalize(key);
            if !allowed.iter().any(|a| normalize(a) == key) {
                return Err(FedcalError::Parse {
                    line: line_no,
                    message: format!("unknown key `{key}` (allowed: {})", allowed.join(", ")),
                });
            }
            let value = value.trim().trim_matches('"').to_string();
            if values.insert(key.clone(), (line_no, value)).is_some() {
                return Err(FedcalError::Parse {
                    line: line_no,
                    message: format!("key `{key}` given twice"),
                });
            }
        }
        Ok(RunConfig { values })
    }

    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self> {
        RunConfig::parse(&std::fs::read_to_string(path)?, allowed)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(|(_, v)| v.as_str())
    }

    /// Typed value; parse failures carry the line number.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(&normalize(key)) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| FedcalError::Parse {
                line: *line,
                message: format!("bad value for `{key}`: {e}"),
            }),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
