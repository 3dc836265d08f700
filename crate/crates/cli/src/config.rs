//! Flat `key = value` run configuration.
//!
//! Sources are merged in order: the config file, then `--set key=value`
//! overrides, then dedicated flags. Every key a command reads is marked as
//! used; anything left over is rejected before the command runs.

use std::sync::Mutex;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    used: Mutex<BTreeSet<String>>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::validation(None, format!("{origin}:{}: expected `key = value`", lineno + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(CliError::validation(None, format!("{origin}:{}: empty key", lineno + 1)));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::validation(Some(&key), format!("{origin}:{}: duplicate key", lineno + 1)));
            }
        }
        Ok(RunConfig { values, used: Mutex::default() })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| CliError::validation(None, format!("--set expects key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.lock().expect("config lock").insert(key.to_string());
        self.values.get(key).map(String::as_str)
    }

    pub fn string(&self, key: &str) -> Option<String> {
        self.raw(key).map(str::to_string)
    }

    pub fn require(&self, key: &str) -> Result<String, CliError> {
        self.string(key).ok_or_else(|| CliError::validation(Some(key), "missing required key".into()))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.require(key).map(PathBuf::from)
    }

    pub fn parsed<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| CliError::validation(Some(key), format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn parsed_or<T>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// Applies `f` to the value when present, tagging errors with `key`.
    pub fn with<T>(&self, key: &str, f: impl FnOnce(&str) -> Result<T, String>) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => f(v).map(Some).map_err(|m| CliError::validation(Some(key), m)),
        }
    }

    /// Fails on any key no command accessor asked for.
    pub fn reject_unknown(&self) -> Result<(), CliError> {
        let used = self.used.lock().expect("config lock");
        match self.values.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(CliError::validation(Some(k), "unknown key for this command".into())),
            None => Ok(()),
        }
    }
}

/// Parses `1-6`, `1,2,5` or a mix such as `1-3,8`.
pub fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| format!("bad range `{part}`"))?, b.trim().parse().map_err(|_| format!("bad range `{part}`"))?);
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad integer `{part}`"))?),
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

pub fn parse_bool(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got `{s}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_unknown() {
        let c = RunConfig::parse("# run\nn = 10\nscenario=lowdim # inline\n\nextra = 1\n", "t").unwrap();
        assert_eq!(c.parsed::<usize>("n").unwrap(), Some(10));
        assert_eq!(c.string("scenario").as_deref(), Some("lowdim"));
        let e = c.reject_unknown().unwrap_err();
        assert!(e.to_string().contains("extra"), "{e}");
    }

    #[test]
    fn malformed_lines() {
        assert!(RunConfig::parse("novalue\n", "t").is_err());
        assert!(RunConfig::parse("a=1\na=2\n", "t").is_err());
        let c = RunConfig::parse("n = ten", "t").unwrap();
        assert!(c.parsed::<usize>("n").unwrap_err().to_string().contains("key=n"));
    }

    #[test]
    fn lists() {
        assert_eq!(parse_usize_list("1-3,8").unwrap(), vec![1, 2, 3, 8]);
        assert!(parse_usize_list("3-1").is_err());
        assert!(parse_usize_list("").is_err());
        assert!(parse_bool("maybe").is_err());
    }
}
